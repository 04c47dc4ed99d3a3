"""
Parameter and shape calculator for the multiscale filter-bank CNN classifier.

ARCH POLICY:
============
1. Every layer row carries its parameter count as a product of symbols
   (coefficient plus exponents over C, T, F_T, F_S, N_C; the pooled time
   axis appears as T/15) so the formulas can be printed and evaluated
   from the same data.
2. Shapes are tuples of the same monomials.
3. T must be divisible by 15 for the pooling stride; otherwise the pooled
   length is floored and the result is flagged.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import structlog

from ..models.errors import ParameterError

logger = structlog.get_logger()

POOL_STRIDE = 15


@dataclass(frozen=True)
class Monomial:
    """coefficient * prod(symbol ** power)."""

    coefficient: int = 1
    powers: Tuple[Tuple[str, int], ...] = ()

    def evaluate(self, values: Dict[str, int]) -> int:
        total = self.coefficient
        for symbol, power in self.powers:
            total *= values[symbol] ** power
        return total

    def __str__(self) -> str:
        factors = "".join(
            (f"({s})" if "/" in s else s) + (f"^{p}" if p != 1 else "") for s, p in self.powers
        )
        if not factors:
            return str(self.coefficient)
        return factors if self.coefficient == 1 else f"{self.coefficient}{factors}"


def mono(coefficient: int = 1, *symbols: str) -> Monomial:
    return Monomial(coefficient, tuple((s, 1) for s in symbols))


@dataclass(frozen=True)
class LayerRow:
    name: str
    filters: Optional[str] = None
    kernel: Optional[Tuple[str, str]] = None
    stride: Optional[Tuple[int, int]] = None
    params: Optional[Monomial] = None
    output: Tuple[Monomial, ...] = ()
    activation: Optional[str] = None
    padding: Optional[str] = None


@dataclass(frozen=True)
class ArchSpec:
    rows: Tuple[LayerRow, ...] = field(default_factory=tuple)

    def param_formulas(self) -> Dict[str, str]:
        return {row.name: str(row.params) for row in self.rows if row.params is not None}


def _shape(*parts: Monomial) -> Tuple[Monomial, ...]:
    return tuple(parts)


ONE = mono(1)
MSFBCNN = ArchSpec(rows=(
    LayerRow("Input", output=_shape(mono(1, "C"), mono(1, "T"))),
    LayerRow("Reshape", output=_shape(ONE, mono(1, "T"), mono(1, "C"))),
    LayerRow("Timeconv1", "F_T", ("64", "1"), (1, 1), mono(64, "F_T"),
             _shape(mono(1, "F_T"), mono(1, "T"), mono(1, "C")), "Linear", "Same"),
    LayerRow("Timeconv2", "F_T", ("40", "1"), (1, 1), mono(40, "F_T"),
             _shape(mono(1, "F_T"), mono(1, "T"), mono(1, "C")), "Linear", "Same"),
    LayerRow("Timeconv3", "F_T", ("26", "1"), (1, 1), mono(26, "F_T"),
             _shape(mono(1, "F_T"), mono(1, "T"), mono(1, "C")), "Linear", "Same"),
    LayerRow("Timeconv4", "F_T", ("16", "1"), (1, 1), mono(16, "F_T"),
             _shape(mono(1, "F_T"), mono(1, "T"), mono(1, "C")), "Linear", "Same"),
    LayerRow("Concatenate", output=_shape(mono(4, "F_T"), mono(1, "T"), mono(1, "C"))),
    LayerRow("BatchNorm1", params=mono(2, "F_T"), output=_shape(mono(4, "F_T"), mono(1, "T"), mono(1, "C"))),
    LayerRow("Spatialconv", "F_S", ("1", "C"), (1, 1), mono(4, "C", "F_T", "F_S"),
             _shape(mono(1, "F_S"), mono(1, "T"), ONE), "Linear", "Valid"),
    LayerRow("BatchNorm2", params=mono(2, "F_S"), output=_shape(mono(1, "F_S"), mono(1, "T"), ONE)),
    LayerRow("Square", output=_shape(mono(1, "F_S"), mono(1, "T"), ONE), activation="Square"),
    LayerRow("AveragePool", kernel=("75", "1"), stride=(POOL_STRIDE, 1),
             output=_shape(mono(1, "F_S"), mono(1, "T/15"), ONE), padding="Valid"),
    LayerRow("Log", output=_shape(mono(1, "F_S"), mono(1, "T/15"), ONE), activation="Log"),
    LayerRow("Dropout", output=_shape(mono(1, "F_S"), mono(1, "T/15"), ONE)),
    LayerRow("Dense", "N_C", ("T/15", "1"), (1, 1), mono(1, "F_S", "T/15", "N_C"),
             _shape(mono(1, "N_C"),), "Linear", "Valid"),
))


@dataclass
class ArchReport:
    layers: List[Dict[str, object]]
    total_params: int
    flagged: bool = False
    notes: List[str] = field(default_factory=list)


def arch_calc(spec: ArchSpec, C: int, T: int, F_T: int, F_S: int, N_C: int) -> ArchReport:
    """Per-layer parameter counts and output shapes; total is their sum."""
    inputs = {"C": C, "T": T, "F_T": F_T, "F_S": F_S, "N_C": N_C}
    for name, value in inputs.items():
        if int(value) != value or value <= 0:
            raise ParameterError(f"{name} must be a positive integer, got {value}")

    notes = []
    flagged = T % POOL_STRIDE != 0
    if flagged:
        notes.append(f"T={T} is not divisible by {POOL_STRIDE}; pooled length floored to {T // POOL_STRIDE}")
        logger.warning("arch_pool_length_floored", T=T, pooled=T // POOL_STRIDE)
    values = dict(inputs, **{"T/15": T // POOL_STRIDE})

    layers = []
    for row in spec.rows:
        layers.append({
            "layer": row.name,
            "params_formula": str(row.params) if row.params is not None else "",
            "params": row.params.evaluate(values) if row.params is not None else 0,
            "output_formula": "(" + ", ".join(str(m) for m in row.output) + ")",
            "output": tuple(m.evaluate(values) for m in row.output),
        })
    total = sum(layer["params"] for layer in layers)
    return ArchReport(layers=layers, total_params=total, flagged=flagged, notes=notes)
