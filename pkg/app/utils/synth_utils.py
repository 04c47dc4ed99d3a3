"""
Planted synthetic tasks with known informative nodes.

PLANTING POLICY:
================
1. Labels are balanced (within one sample) and shuffled with the task seed.
2. Non-informative nodes emit pure N(0, 1) noise.
3. An informative node carrying class code c (out of n codes) adds the mean
   shift snr * (c + 1) / n * p[k, c], where p[k, c] is a fixed balanced +-1
   pattern over the node's L features. The amplitude also changes the
   per-trial feature variance, so variance-based rankings see the signal.
4. `split` placement plants two groups around the two most distant nodes;
   one side encodes c mod h and the other c div h with h = ceil(sqrt(C)),
   so only both sides together identify the class (with C = 2 both sides
   carry the full label).
"""

import math
from typing import Dict, List, Optional, Tuple

import numpy as np
import structlog
from sklearn.linear_model import LogisticRegression

from ..models.dataset import Dataset, SyntheticTask
from ..models.domain import TaskSpec
from ..models.errors import ParameterError
from .topology_utils import NodeLayout, build_distance_matrix

logger = structlog.get_logger()

SELF_CHECK_ACCURACY = 0.95


def grid_shape(n_nodes: int) -> Tuple[int, int]:
    """Most square rows x cols grid holding exactly n_nodes (rows <= cols)."""
    rows = max(r for r in range(1, int(math.isqrt(n_nodes)) + 1) if n_nodes % r == 0)
    return rows, n_nodes // rows


def make_layout(n_nodes: int, layout_kind: str) -> NodeLayout:
    if layout_kind == "grid":
        return NodeLayout.grid(*grid_shape(n_nodes))
    if layout_kind == "ring":
        return NodeLayout.ring(n_nodes)
    raise ParameterError(f"unknown layout kind '{layout_kind}'")


def _nearest(D: np.ndarray, anchor: int, count: int, exclude=()) -> List[int]:
    order = [int(i) for i in np.argsort(D[anchor], kind="stable") if int(i) not in exclude]
    return order[:count]


def place_informative(D: np.ndarray, M: int, placement: str) -> Tuple[List[int], List[int]]:
    """Informative nodes as (side_a, side_b); side_b is empty unless placement is split."""
    n = D.shape[0]
    if M > n:
        raise ParameterError(f"cannot plant {M} informative nodes on {n} nodes")
    if placement == "near":
        center = int(np.argmin(D.sum(axis=1)))
        return sorted(_nearest(D, center, M)), []
    if placement == "far":
        if M == 1:
            return [0], []
        a, b = np.unravel_index(int(np.argmax(D)), D.shape)
        chosen = [int(a), int(b)]
        while len(chosen) < M:
            spread = D[:, chosen].min(axis=1)
            spread[chosen] = -1.0
            chosen.append(int(np.argmax(spread)))
        return sorted(chosen), []
    if placement == "split":
        if M < 2:
            raise ParameterError("split placement needs at least two informative nodes")
        a, b = np.unravel_index(int(np.argmax(D)), D.shape)
        size_a = (M + 1) // 2
        side_a = _nearest(D, int(a), size_a)
        side_b = _nearest(D, int(b), M - size_a)
        if set(side_a) & set(side_b):
            raise ParameterError(f"split placement of {M} nodes overlaps on a {n}-node layout")
        return sorted(side_a), sorted(side_b)
    raise ParameterError(f"unknown placement '{placement}'")


def class_codes(n_classes: int, split: bool) -> Tuple[np.ndarray, int, np.ndarray, int]:
    """Per-class code on side a and side b, with the number of distinct codes on each side."""
    labels = np.arange(n_classes)
    if not split or n_classes == 2:
        return labels, n_classes, labels, n_classes
    h = math.ceil(math.sqrt(n_classes))
    return labels % h, h, labels // h, math.ceil(n_classes / h)


def balanced_patterns(rng: np.random.Generator, n_codes: int, n_features: int) -> np.ndarray:
    """(n_codes, L) rows holding ceil(L/2) ones and floor(L/2) minus ones in random order."""
    base = np.array([1.0] * ((n_features + 1) // 2) + [-1.0] * (n_features // 2))
    return np.stack([rng.permutation(base) for _ in range(n_codes)])


def self_check(dataset: Dataset, informative: List[int], seed: int) -> float:
    """Linear-probe test accuracy on the full informative set."""
    train_set, val_set, test_set = dataset.split(seed)
    X_fit = np.concatenate([train_set.X, val_set.X])[:, informative, :].reshape(-1, len(informative) * dataset.n_features)
    y_fit = np.concatenate([train_set.y, val_set.y])
    X_test = test_set.X[:, informative, :].reshape(test_set.n_samples, -1)
    probe = LogisticRegression(max_iter=1000)
    probe.fit(X_fit, y_fit)
    return float(probe.score(X_test, test_set.y))


def make_planted_task(
    N: int = 8,
    M: int = 3,
    L: int = 8,
    n_samples: int = 400,
    n_classes: int = 4,
    layout_kind: str = "grid",
    informative_placement: str = "near",
    snr: float = 2.0,
    seed: int = 0,
) -> SyntheticTask:
    """
    Generate a planted task; deterministic in `seed`.

    Raises:
        ParameterError: impossible placement, or the full informative set
            fails the linear-probe self-check (snr > 0 only)
    """
    if M > N:
        raise ParameterError(f"M={M} exceeds N={N}")
    if n_classes < 2:
        raise ParameterError("a task needs at least two classes")
    if snr < 0:
        raise ParameterError(f"snr must be nonnegative, got {snr}")

    rng = np.random.default_rng(seed)
    layout = make_layout(N, layout_kind)
    D = build_distance_matrix(layout).values
    side_a, side_b = place_informative(D, M, informative_placement)
    codes_a, n_a, codes_b, n_b = class_codes(n_classes, split=bool(side_b))

    y = rng.permutation(np.arange(n_samples) % n_classes)
    X = rng.standard_normal((n_samples, N, L))
    for nodes, codes, n_codes in ((side_a, codes_a, n_a), (side_b, codes_b, n_b)):
        for k in nodes:
            patterns = balanced_patterns(rng, n_codes, L)
            code = codes[y]
            amplitude = snr * (code + 1) / n_codes
            X[:, k, :] += amplitude[:, None] * patterns[code]

    informative = sorted(side_a + side_b)
    dataset = Dataset(X=X, y=y.astype(np.int64), n_classes=n_classes)
    accuracy: Optional[float] = None
    if snr > 0:
        accuracy = self_check(dataset, informative, seed)
        if accuracy < SELF_CHECK_ACCURACY:
            logger.error("planted_task_self_check_failed", accuracy=accuracy, snr=snr, seed=seed)
            raise ParameterError(
                f"planted signal too weak: linear probe reaches {accuracy:.3f} < {SELF_CHECK_ACCURACY} "
                f"on the informative nodes; raise snr or n_samples"
            )

    metadata: Dict[str, object] = {
        "layout_kind": layout_kind,
        "placement": informative_placement,
        "n_classes": n_classes,
        "sides": [side_a, side_b] if side_b else [side_a],
    }
    logger.info("planted_task_generated",
        n_nodes=N,
        n_informative=M,
        placement=informative_placement,
        informative=informative,
        self_check_accuracy=accuracy,
        seed=seed,
    )
    return SyntheticTask(
        dataset=dataset,
        coords=layout.coords,
        informative_sets=[tuple(informative)],
        snr=snr,
        seed=seed,
        metadata=metadata,
        self_check_accuracy=accuracy,
    )


def task_from_spec(spec: TaskSpec) -> SyntheticTask:
    return make_planted_task(
        N=spec.n_nodes,
        M=spec.n_informative,
        L=spec.n_features,
        n_samples=spec.n_samples,
        n_classes=spec.n_classes,
        layout_kind=spec.layout_kind,
        informative_placement=spec.placement,
        snr=spec.snr,
        seed=spec.seed,
    )
