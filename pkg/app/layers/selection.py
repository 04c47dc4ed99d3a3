"""Selection layers: independent M-of-N concrete selection and Conditional Gumbel-Softmax.

Each layer turns a batch X of shape (B, N, L) into selected features (B, M, L)
by drawing a column-stochastic weight matrix per batch element and computing
Z^T X. At inference the stochasticity is removed and a HardSelection is read
off the logits.
"""

from typing import Any, Dict, List, Mapping, Optional, Union

import numpy as np
import structlog

from ..autodiff import Tensor, matmul, mean, reshape, stack, sum_
from ..autodiff.tensor import mul
from ..models.domain import HardSelection
from ..models.errors import DimensionError, InfeasibleSelectionError
from ..utils.concrete_utils import (
    apply_mask,
    categorical_entropy,
    categorical_probs,
    concrete_sample,
    gumbel_max,
    gumbel_noise,
)
from ..utils.topology_utils import BayesNet, CommGraph, FeasibilityMask, transpose_to_bayesnet

logger = structlog.get_logger()

INIT_SCALE = 0.01
NoiseOverride = Optional[np.ndarray]


def _init_logits(shape, rng: Optional[np.random.Generator]) -> np.ndarray:
    rng = rng if rng is not None else np.random.default_rng(0)
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


def _as_batch(X, n_nodes: int):
    """Accept (N, L) or (B, N, L); return a (B, N, L) operand and whether it was unbatched."""
    values = X.values if isinstance(X, Tensor) else np.asarray(X, dtype=np.float64)
    if values.ndim == 2:
        X = reshape(X, (1,) + values.shape) if isinstance(X, Tensor) else values[None]
        values = values[None]
        unbatched = True
    else:
        unbatched = False
    if values.ndim != 3 or values.shape[1] != n_nodes:
        raise DimensionError("selection", [values.shape, (n_nodes,)])
    return X, unbatched


def duplicate_overlap(weights: Tensor) -> Tensor:
    """Expected pairwise overlap sum_{m < m'} z^(m) . z^(m'), averaged over the batch.

    Uses 0.5 * (|sum_m z^(m)|^2 - sum_m |z^(m)|^2) on weights of shape (B, M, N).
    """
    total = sum_(weights, axis=1)
    cross = sum_(sum_(mul(total, total), axis=1), axis=0)
    own = sum_(sum_(sum_(mul(weights, weights), axis=2), axis=1), axis=0)
    return mul(cross - own, 0.5 / weights.shape[0])


class IndependentSelectionLayer:
    """M independent concrete distributions over N nodes (rows of `logits`)."""

    kind = "independent"

    def __init__(self, n_nodes: int, n_vertices: int, rng: Optional[np.random.Generator] = None,
                 logits: Optional[np.ndarray] = None):
        values = logits if logits is not None else _init_logits((n_vertices, n_nodes), rng)
        self.logits = Tensor(np.array(values, dtype=np.float64), requires_grad=True, name="selection_logits")
        self.n_nodes = n_nodes
        self.n_vertices = n_vertices

    @classmethod
    def single(cls, n_nodes: int, rng: Optional[np.random.Generator] = None) -> "IndependentSelectionLayer":
        """Single-feature selection is the M = 1 case."""
        return cls(n_nodes, 1, rng=rng)

    def parameters(self) -> List[Tensor]:
        return [self.logits]

    def sample_weights(self, batch_size: int, tau: float, rng: np.random.Generator,
                       n_rounds: int = 5, noise: NoiseOverride = None) -> Tensor:
        """Averaged concrete samples, shape (B, M, N); row m is z^(m)."""
        shape = (n_rounds, batch_size, self.n_vertices, self.n_nodes)
        noise = gumbel_noise(shape, rng) if noise is None else np.broadcast_to(noise, shape)
        return mean(concrete_sample(self.logits, tau, noise), axis=0)

    def forward(self, X, tau: float, rng: np.random.Generator, n_rounds: int = 5,
                noise: NoiseOverride = None) -> Tensor:
        """Z^T X for a fresh sample per batch element."""
        X, unbatched = _as_batch(X, self.n_nodes)
        batch = X.shape[0]
        weights = self.sample_weights(batch, tau, rng, n_rounds, noise)
        out = matmul(weights, X)
        return reshape(out, out.shape[1:]) if unbatched else out

    def infer(self, distinct: bool = False) -> HardSelection:
        """Per-row argmax of the logits, lowest index on ties.

        With `distinct`, rows are read in order and each takes its best node
        not already taken.
        """
        if not distinct:
            return HardSelection(assignment=tuple(int(i) for i in np.argmax(self.logits.values, axis=1)))
        assignment: List[int] = []
        for row in self.logits.values:
            row = row.copy()
            row[assignment] = -np.inf
            assignment.append(int(np.argmax(row)))
        return HardSelection(assignment=tuple(assignment))

    def marginals(self) -> np.ndarray:
        return categorical_probs(self.logits.values)

    def entropy(self) -> float:
        return float(categorical_entropy(self.logits.values).mean())

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "n_nodes": self.n_nodes, "n_vertices": self.n_vertices,
                "logits": self.logits.values.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "IndependentSelectionLayer":
        return cls(data["n_nodes"], data["n_vertices"], logits=np.array(data["logits"]))


class ConditionalSelectionLayer:
    """Conditional Gumbel-Softmax over the Bayesian network of a communication tree.

    The root vertex has a logit vector; every other vertex v has an N x N matrix
    whose row k holds the logits for v given that its parent took node k.
    Entries outside the feasibility mask are pinned to the mask surrogate at
    every read and are never updated by the optimizer.
    """

    kind = "conditional"

    def __init__(self, mask: FeasibilityMask, net: BayesNet, rng: Optional[np.random.Generator] = None,
                 root_logits: Optional[np.ndarray] = None,
                 cond_logits: Optional[Mapping[int, np.ndarray]] = None):
        self.mask = mask
        self.net = net
        self.n_nodes = mask.n_nodes
        self.n_vertices = net.n_vertices
        n = self.n_nodes

        values = root_logits if root_logits is not None else _init_logits((n,), rng)
        self.root_logits = Tensor(np.array(values, dtype=np.float64), requires_grad=True, name="root_logits")
        self.root_logits.trainable_mask = mask.root_mask
        self.cond_logits: Dict[int, Tensor] = {}
        for v in net.order[1:]:
            values = cond_logits[v] if cond_logits is not None else _init_logits((n, n), rng)
            param = Tensor(np.array(values, dtype=np.float64), requires_grad=True, name=f"cond_logits[{v}]")
            param.trainable_mask = mask.cond_masks[v]
            self.cond_logits[v] = param

    def parameters(self) -> List[Tensor]:
        return [self.root_logits] + [self.cond_logits[v] for v in sorted(self.cond_logits)]

    def masked_root(self) -> Tensor:
        return apply_mask(self.root_logits, self.mask.root_mask)

    def masked_cond(self, vertex: int) -> Tensor:
        """Masked conditional logits. Rows with no admissible node are read unmasked:
        the parent never takes those nodes, so they carry zero weight."""
        mask = self.mask.cond_masks[vertex]
        dead = ~mask.any(axis=1, keepdims=True)
        return apply_mask(self.cond_logits[vertex], mask | dead)

    def sample_weights(self, batch_size: int, tau: float, rng: np.random.Generator,
                       n_rounds: int = 5, noise: Optional[Mapping[int, np.ndarray]] = None) -> Tensor:
        """Ancestral concrete pass, repeated n_rounds times and averaged per vertex: (B, M, N).

        noise, when given, maps vertex -> Gumbel noise broadcastable to
        (R, B, N) for the root and (R, B, N, N) for the other vertices.
        """
        n, shape = self.n_nodes, (n_rounds, batch_size)
        noise = noise or {}
        z: Dict[int, Tensor] = {}
        root = self.net.root
        g = noise.get(root)
        g = gumbel_noise(shape + (n,), rng) if g is None else np.broadcast_to(g, shape + (n,))
        z[root] = concrete_sample(self.masked_root(), tau, g)
        for v in self.net.order[1:]:
            parent = self.net.parent_of[v]
            g = noise.get(v)
            g = gumbel_noise(shape + (n, n), rng) if g is None else np.broadcast_to(g, shape + (n, n))
            rows = concrete_sample(self.masked_cond(v), tau, g)
            weighted = matmul(reshape(z[parent], shape + (1, n)), rows)
            z[v] = reshape(weighted, shape + (n,))
        per_round = stack([z[v] for v in range(self.n_vertices)], axis=2)
        return mean(per_round, axis=0)

    def forward(self, X, tau: float, rng: np.random.Generator, n_rounds: int = 5,
                noise: Optional[Mapping[int, np.ndarray]] = None) -> Tensor:
        X, unbatched = _as_batch(X, self.n_nodes)
        weights = self.sample_weights(X.shape[0], tau, rng, n_rounds, noise)
        out = matmul(weights, X)
        return reshape(out, out.shape[1:]) if unbatched else out

    def _masked_root_array(self) -> np.ndarray:
        return np.where(self.mask.root_mask, self.root_logits.values, -np.inf)

    def _masked_cond_array(self, vertex: int) -> np.ndarray:
        return np.where(self.mask.cond_masks[vertex], self.cond_logits[vertex].values, -np.inf)

    def _row_for(self, v: int, assignment: Dict[int, int]) -> np.ndarray:
        if v == self.net.root:
            return self._masked_root_array()
        return self._masked_cond_array(v)[assignment[self.net.parent_of[v]]]

    def _distinct_assignment(self, depth: int, assignment: Dict[int, int]) -> Optional[Dict[int, int]]:
        # depth-first over candidates in argmax order; the first leaf is the greedy pick when it exists
        if depth == len(self.net.order):
            return assignment
        v = self.net.order[depth]
        row = self._row_for(v, assignment)
        used = set(assignment.values())
        for node in np.argsort(-row, kind="stable"):
            node = int(node)
            if np.isneginf(row[node]):
                break
            if node in used:
                continue
            found = self._distinct_assignment(depth + 1, {**assignment, v: node})
            if found is not None:
                return found
        return None

    def infer(self, distinct: bool = False) -> HardSelection:
        """Greedy argmax in topological order.

        With `distinct`, already chosen nodes are skipped, backtracking to the
        next-best parent choice when a vertex runs out of nodes.
        """
        if distinct:
            assignment = self._distinct_assignment(0, {})
            if assignment is None:
                raise InfeasibleSelectionError("no assignment of pairwise distinct nodes meets the constraints")
        else:
            assignment = {}
            for v in self.net.order:
                row = self._row_for(v, assignment)
                if np.all(np.isneginf(row)):
                    raise InfeasibleSelectionError(f"vertex {v} has no admissible node given its parent")
                assignment[v] = int(np.argmax(row))
        selection = HardSelection(assignment=tuple(assignment[v] for v in range(self.n_vertices)))
        logger.debug("selection_inferred", assignment=selection.assignment, distinct=distinct)
        return selection

    def hard_sample_batch(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Exact ancestral sampling via the Gumbel-Max trick: (size, M) node indices."""
        n = self.n_nodes
        out = np.zeros((size, self.n_vertices), dtype=np.int64)
        root = self.net.root
        out[:, root] = gumbel_max(self._masked_root_array(), gumbel_noise((size, n), rng))
        for v in self.net.order[1:]:
            rows = self._masked_cond_array(v)[out[:, self.net.parent_of[v]]]
            out[:, v] = gumbel_max(rows, gumbel_noise((size, n), rng))
        return out

    def hard_sample(self, rng: np.random.Generator) -> HardSelection:
        return HardSelection(assignment=tuple(int(i) for i in self.hard_sample_batch(rng, 1)[0]))

    def root_marginal(self) -> np.ndarray:
        return categorical_probs(self._masked_root_array())

    def conditional_probs(self, vertex: int) -> np.ndarray:
        return categorical_probs(self._masked_cond_array(vertex))

    def entropy(self) -> float:
        return float(categorical_entropy(self._masked_root_array()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "n_nodes": self.n_nodes,
            "n_vertices": self.n_vertices,
            "parents": list(self.net.parent_of),
            "root_logits": self.root_logits.values.tolist(),
            "cond_logits": {str(v): t.values.tolist() for v, t in sorted(self.cond_logits.items())},
            "mask": {
                "root": self.mask.root_mask.tolist(),
                "cond": {str(v): m.tolist() for v, m in sorted(self.mask.cond_masks.items())},
                "thresholds": {str(v): t for v, t in sorted(self.mask.thresholds.items())},
            },
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ConditionalSelectionLayer":
        net = transpose_to_bayesnet(CommGraph(parents=tuple(data["parents"])))
        mask = FeasibilityMask(
            root_mask=np.array(data["mask"]["root"], dtype=bool),
            cond_masks={int(v): np.array(m, dtype=bool) for v, m in data["mask"]["cond"].items()},
            thresholds={int(v): float(t) for v, t in data["mask"]["thresholds"].items()},
            root=net.root,
        )
        return cls(
            mask, net,
            root_logits=np.array(data["root_logits"]),
            cond_logits={int(v): np.array(m) for v, m in data["cond_logits"].items()},
        )


class FixedSelectionLayer:
    """Passes a given selection through unchanged; used to score a fixed subset."""

    kind = "fixed"

    def __init__(self, selection: HardSelection, n_nodes: int):
        if max(selection.assignment) >= n_nodes:
            raise DimensionError("fixed_selection", [(len(selection.assignment),), (n_nodes,)])
        self.selection = selection
        self.n_nodes = n_nodes
        self.n_vertices = selection.n_vertices

    def parameters(self) -> List[Tensor]:
        return []

    def forward(self, X, tau: float = 1.0, rng: Optional[np.random.Generator] = None,
                n_rounds: int = 1, noise=None) -> Tensor:
        values = X.values if isinstance(X, Tensor) else np.asarray(X, dtype=np.float64)
        return Tensor(values[..., list(self.selection.assignment), :])

    def infer(self) -> HardSelection:
        return self.selection

    def entropy(self) -> float:
        return 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "n_nodes": self.n_nodes, "selection": list(self.selection.assignment)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FixedSelectionLayer":
        return cls(HardSelection(assignment=tuple(data["selection"])), data["n_nodes"])


SelectionLayer = Union[IndependentSelectionLayer, ConditionalSelectionLayer, FixedSelectionLayer]

LAYER_TYPES = {
    IndependentSelectionLayer.kind: IndependentSelectionLayer,
    ConditionalSelectionLayer.kind: ConditionalSelectionLayer,
    FixedSelectionLayer.kind: FixedSelectionLayer,
}


def layer_from_dict(data: Dict[str, Any]) -> SelectionLayer:
    return LAYER_TYPES[data["kind"]].from_dict(data)
