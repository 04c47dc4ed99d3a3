"""
Concrete (Gumbel-Softmax) sampling utilities.

SAMPLING POLICY:
================
1. Logits are unconstrained log-probabilities; callers own the RNG stream.
2. Masked classes are -inf in plain arrays and MASK_VALUE inside the tape,
   so gradients stay finite while masked entries still sample to exact zeros.
3. Every argmax breaks ties towards the lowest index.
"""

from typing import Optional, Tuple, Union

import numpy as np

from ..autodiff import Tensor, add, mean, mul, softmax
from ..models.domain import TauSchedule
from ..models.errors import InfeasibleDistributionError, ParameterError


MASK_VALUE = -1e9
NOISE_EPS = 1e-12

LogitsLike = Union[Tensor, np.ndarray]


def check_temperature(tau: float) -> float:
    tau = float(tau)
    if not np.isfinite(tau) or tau <= 0:
        raise ParameterError(f"temperature must be a positive real, got {tau}")
    return tau


def gumbel_noise(shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """-log(-log(u)) with u uniform on (0, 1), clamped to [eps, 1 - eps]."""
    u = np.clip(rng.uniform(size=shape), NOISE_EPS, 1.0 - NOISE_EPS)
    return -np.log(-np.log(u))


def apply_mask(logits: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    """Pin entries outside `mask` to MASK_VALUE; they receive exactly zero gradient."""
    if mask is None:
        return logits
    keep = np.asarray(mask, dtype=np.float64)
    return add(mul(logits, keep), (1.0 - keep) * MASK_VALUE)


def _as_masked_array(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    return np.where(np.isneginf(logits), MASK_VALUE, logits)


def _check_feasible(values: np.ndarray):
    if np.any(np.all(values <= MASK_VALUE / 2, axis=-1)):
        raise InfeasibleDistributionError("every class of the distribution is masked out")


def gumbel_max(logits: np.ndarray, noise: np.ndarray) -> Union[int, np.ndarray]:
    """argmax_n(logits_n + g_n) over the last axis; exact categorical sampling."""
    logits = np.asarray(logits, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[-1] != logits.shape[-1]:
        raise ParameterError(f"noise shape {noise.shape} does not match logits {logits.shape}")
    _check_feasible(_as_masked_array(logits))
    index = np.argmax(logits + noise, axis=-1)
    return int(index) if np.ndim(index) == 0 else index


def one_hot(index: int, n: int) -> np.ndarray:
    vec = np.zeros(n)
    vec[index] = 1.0
    return vec


def harden(sample: Union[Tensor, np.ndarray]) -> Union[int, np.ndarray]:
    """Per-sample argmax of a concrete sample (lowest index on ties)."""
    values = sample.values if isinstance(sample, Tensor) else np.asarray(sample)
    index = np.argmax(values, axis=-1)
    return int(index) if np.ndim(index) == 0 else index


def concrete_sample(logits: LogitsLike, tau: float, noise: np.ndarray) -> Tensor:
    """softmax((logits + g) / tau) over the last axis, differentiable in `logits`."""
    tau = check_temperature(tau)
    if not isinstance(logits, Tensor):
        logits = Tensor(_as_masked_array(logits))
    _check_feasible(logits.values)
    return softmax(add(logits, noise), tau=tau, axis=-1)


def averaged_sample(
    logits: LogitsLike,
    tau: float,
    n_rounds: int,
    rng: np.random.Generator,
) -> Tensor:
    """Mean of `n_rounds` independent concrete samples; gradients flow through every round."""
    if n_rounds < 1:
        raise ParameterError(f"n_rounds must be >= 1, got {n_rounds}")
    logits = logits if isinstance(logits, Tensor) else Tensor(_as_masked_array(logits))
    noise = gumbel_noise((n_rounds,) + logits.shape, rng)
    return mean(concrete_sample(logits, tau, noise), axis=0)


def anneal(schedule: TauSchedule, epoch: float, horizon: Optional[int] = None) -> float:
    """Exponential interpolation tau_start * (tau_end / tau_start) ** (epoch / horizon)."""
    horizon = schedule.horizon if horizon is None else horizon
    if horizon is None:
        raise ParameterError("annealing horizon is not set")
    start, end = schedule.tau_start, schedule.tau_end
    if horizon == 0:
        if start != end:
            raise ParameterError("a zero horizon needs tau_start == tau_end")
        return start
    if epoch < 0 or epoch > horizon:
        raise ParameterError(f"epoch {epoch} outside [0, {horizon}]")
    if epoch == 0:
        return start
    if epoch == horizon:
        return end
    return start * (end / start) ** (epoch / horizon)


def categorical_probs(logits: np.ndarray) -> np.ndarray:
    """Normalised categorical probabilities; -inf / masked entries map to zero."""
    values = _as_masked_array(logits)
    shifted = values - values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def categorical_entropy(logits: np.ndarray) -> np.ndarray:
    """Entropy in nats of softmax(logits) along the last axis."""
    probs = categorical_probs(logits)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    return -terms.sum(axis=-1)
