"""Small feedforward classifier over the selected (M, L) features."""

from typing import Any, Dict, List, Optional

import numpy as np

from ..autodiff import Tensor, add, matmul, reshape, tanh
from ..models.errors import DimensionError


def _glorot(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Classifier:
    """
    One tanh hidden layer over the flattened M*L selected features.

    Weights use Glorot-uniform initialisation; biases start at zero.
    """

    def __init__(self, n_vertices: int, n_features: int, n_classes: int,
                 hidden_width: int = 32, rng: Optional[np.random.Generator] = None,
                 weights: Optional[Dict[str, np.ndarray]] = None):
        self.n_vertices = n_vertices
        self.n_features = n_features
        self.n_classes = n_classes
        self.hidden_width = hidden_width
        d_in = n_vertices * n_features

        if weights is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            weights = {
                "W1": _glorot(d_in, hidden_width, rng),
                "b1": np.zeros(hidden_width),
                "W2": _glorot(hidden_width, n_classes, rng),
                "b2": np.zeros(n_classes),
            }
        self.W1 = Tensor(np.array(weights["W1"], dtype=np.float64), requires_grad=True, name="classifier.W1")
        self.b1 = Tensor(np.array(weights["b1"], dtype=np.float64), requires_grad=True, name="classifier.b1")
        self.W2 = Tensor(np.array(weights["W2"], dtype=np.float64), requires_grad=True, name="classifier.W2")
        self.b2 = Tensor(np.array(weights["b2"], dtype=np.float64), requires_grad=True, name="classifier.b2")

        if self.W1.shape != (d_in, hidden_width) or self.W2.shape != (hidden_width, n_classes):
            raise DimensionError("classifier", [self.W1.shape, self.W2.shape])

    def parameters(self) -> List[Tensor]:
        return [self.W1, self.b1, self.W2, self.b2]

    def forward(self, features) -> Tensor:
        """Class logits (B, C) for selected features of shape (B, M, L)."""
        features = features if isinstance(features, Tensor) else Tensor(features)
        if features.ndim != 3 or features.shape[1:] != (self.n_vertices, self.n_features):
            raise DimensionError("classifier", [features.shape, (self.n_vertices, self.n_features)])
        flat = reshape(features, (features.shape[0], self.n_vertices * self.n_features))
        hidden = tanh(add(matmul(flat, self.W1), self.b1))
        return add(matmul(hidden, self.W2), self.b2)

    def predict(self, features: np.ndarray) -> np.ndarray:
        logits = self.forward(Tensor(np.asarray(features, dtype=np.float64))).values
        return np.argmax(logits, axis=1)

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {"W1": self.W1.values.copy(), "b1": self.b1.values.copy(),
                "W2": self.W2.values.copy(), "b2": self.b2.values.copy()}

    def restore(self, weights: Dict[str, np.ndarray]):
        for key in ("W1", "b1", "W2", "b2"):
            getattr(self, key).values = weights[key].copy()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_vertices": self.n_vertices,
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "hidden_width": self.hidden_width,
            "weights": {k: v.tolist() for k, v in self.snapshot().items()},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Classifier":
        weights = {k: np.array(v) for k, v in data["weights"].items()}
        return cls(data["n_vertices"], data["n_features"], data["n_classes"],
                   data["hidden_width"], weights=weights)
