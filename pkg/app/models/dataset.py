"""In-memory datasets: labelled per-node feature arrays."""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples X of shape (S, N, L) with integer class labels y of shape (S,)."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.X.ndim != 3:
            raise DimensionError("dataset", [self.X.shape])
        if self.y.shape != (self.X.shape[0],):
            raise DimensionError("dataset", [self.X.shape, self.y.shape])

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.X.shape[1]

    @property
    def n_features(self) -> int:
        return self.X.shape[2]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(X=self.X[indices], y=self.y[indices], n_classes=self.n_classes)

    def split(self, seed: int, test_fraction: float = 0.2, val_fraction: float = 0.2) -> Tuple["Dataset", "Dataset", "Dataset"]:
        """Deterministic train/validation/test split.

        The test set is held out first; the remainder is split into train and
        validation (80/20 by default).
        """
        rng = np.random.default_rng(seed)
        order = rng.permutation(self.n_samples)
        n_test = max(1, int(round(test_fraction * self.n_samples)))
        rest, test = order[n_test:], order[:n_test]
        n_val = max(1, int(round(val_fraction * len(rest))))
        val, train = rest[:n_val], rest[n_val:]
        return self.subset(np.sort(train)), self.subset(np.sort(val)), self.subset(np.sort(test))


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    """A planted task: data plus the ground truth it was generated from."""

    dataset: Dataset
    coords: np.ndarray
    informative_sets: List[Tuple[int, ...]]
    snr: float
    seed: int
    metadata: Dict[str, Any] = field(default_factory=dict)
    self_check_accuracy: Optional[float] = None

    @property
    def planted(self) -> Tuple[int, ...]:
        return self.informative_sets[0]
