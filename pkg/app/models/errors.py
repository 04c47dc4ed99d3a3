"""Error types for constrained node selection.

Every error subclasses ``SelectionError`` which itself is a ``ValueError``,
so callers that only care about "bad input" can keep catching ``ValueError``.
"""

from typing import Any, Dict, Optional, Sequence


class SelectionError(ValueError):
    """Base class for all library errors."""


class DimensionError(SelectionError):
    """Operand shapes do not conform to a primitive's signature."""

    def __init__(self, op: str, shapes: Sequence[tuple]):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        rendered = ", ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class ParameterError(SelectionError):
    """A scalar parameter is outside its valid range."""


class InfeasibleDistributionError(SelectionError):
    """Every class of a categorical distribution is masked out."""


class InfeasibleConstraintsError(ParameterError):
    """No node configuration satisfies the distance constraints."""

    def __init__(self, message: str, vertex: Optional[int] = None):
        self.vertex = vertex
        super().__init__(message)


class InfeasibleSelectionError(SelectionError):
    """Inference reached a conditional row with no admissible node."""


class InvalidTopologyError(SelectionError):
    """Communication graph is not a tree rooted at a single aggregation vertex."""


class DegenerateGeometryError(SelectionError):
    """Distances cannot be normalised because all nodes coincide."""


class SizeLimitError(SelectionError):
    """Exhaustive enumeration requested beyond its guard."""


class IngestionError(SelectionError):
    """A tabular dataset could not be read."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        prefix = f"row {row}: " if row is not None else ""
        super().__init__(prefix + message)


class TrainingDivergedError(SelectionError):
    """The training loss became non-finite."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(f"{message} ({self.diagnostics})")


class MissingGradientError(SelectionError):
    """An optimizer step was requested for a parameter without a gradient."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"parameter '{name}' has no gradient; call backward() first")
