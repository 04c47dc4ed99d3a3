# Differentiable selection layers and the downstream classifier
from .classifier import Classifier
from .selection import (
    ConditionalSelectionLayer,
    FixedSelectionLayer,
    IndependentSelectionLayer,
    SelectionLayer,
    duplicate_overlap,
    layer_from_dict,
)

__all__ = [
    "Classifier",
    "ConditionalSelectionLayer",
    "FixedSelectionLayer",
    "IndependentSelectionLayer",
    "SelectionLayer",
    "duplicate_overlap",
    "layer_from_dict",
]
