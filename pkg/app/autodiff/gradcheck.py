"""Central finite-difference gradient checks."""

from typing import Callable, Dict, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    """d fn() / d param by central differences. `fn` must be deterministic."""
    param.values = np.ascontiguousarray(param.values)
    grad = np.zeros_like(param.values)
    flat = param.values.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = fn().item()
        flat[i] = original - step
        lower = fn().item()
        flat[i] = original
        grad.reshape(-1)[i] = (upper - lower) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return float(diff / scale) if scale > 1e-12 else float(diff)


def gradient_check(fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> Dict[str, float]:
    """Relative error between backprop and finite differences, per parameter."""
    for param in params:
        param.zero_grad()
    backward(fn())
    errors = {}
    for index, param in enumerate(params):
        analytic = param.grad if param.grad is not None else np.zeros_like(param.values)
        numeric = numerical_gradient(fn, param, step=step)
        errors[param.name or f"param[{index}]"] = relative_error(analytic, numeric)
    return errors
