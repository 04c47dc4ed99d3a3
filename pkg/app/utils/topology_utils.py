"""
Node geometry, communication graphs and distance-threshold feasibility.

TOPOLOGY POLICY:
================
1. A CommGraph stores, per vertex, the vertex it transmits to (None for the
   aggregation root). Its transpose is the Bayesian network that orders the
   conditional selection: each vertex is conditioned on its transmission target.
2. A pair of nodes may communicate when D_ij <= T and i != j. D is symmetric,
   so edge direction never changes the test.
3. Thresholds are either one global T or one T per non-root vertex (the edge
   from that vertex to its parent).
"""

import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import structlog

from ..models.domain import HardSelection, TopologySpec
from ..models.errors import (
    DegenerateGeometryError,
    InfeasibleConstraintsError,
    InvalidTopologyError,
    ParameterError,
    SizeLimitError,
)

logger = structlog.get_logger()

ThresholdLike = Union[float, Mapping[int, float]]

# Exhaustive enumeration guard.
MAX_ENUM_NODES = 12
MAX_ENUM_VERTICES = 4


@dataclass(frozen=True, eq=False)
class NodeLayout:
    """Node coordinates (N x d, d = 2 or 3) or an explicit N x N distance matrix."""

    coords: Optional[np.ndarray] = None
    distances: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.coords is None) == (self.distances is None):
            raise ParameterError("a layout needs exactly one of coords or distances")
        data = self.coords if self.coords is not None else self.distances
        data = np.asarray(data, dtype=np.float64)
        object.__setattr__(self, "coords" if self.coords is not None else "distances", data)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ParameterError(f"layout array must be 2-D with at least one node, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ParameterError("layout contains non-finite values")
        if self.coords is not None and data.shape[1] not in (2, 3):
            raise ParameterError(f"coordinates must be 2-D or 3-D, got d={data.shape[1]}")

    @property
    def n_nodes(self) -> int:
        return (self.coords if self.coords is not None else self.distances).shape[0]

    @classmethod
    def grid(cls, rows: int, cols: int, spacing: float = 1.0) -> "NodeLayout":
        """Unit-spaced grid; node r * cols + c sits at (c, r)."""
        coords = [(c * spacing, r * spacing) for r in range(rows) for c in range(cols)]
        return cls(coords=np.array(coords, dtype=np.float64))

    @classmethod
    def ring(cls, n: int, radius: float = 1.0) -> "NodeLayout":
        angles = 2.0 * np.pi * np.arange(n) / n
        return cls(coords=np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1))


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Symmetric, zero-diagonal, nonnegative pairwise distances (or costs)."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        D = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", D)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise ParameterError(f"distance matrix must be square, got {D.shape}")
        if not np.allclose(D, D.T, atol=1e-12):
            raise ParameterError("distance matrix must be symmetric")
        if np.any(np.diag(D) != 0):
            raise ParameterError("distance matrix must have a zero diagonal")
        if np.any(D < 0):
            raise ParameterError("distances must be nonnegative")

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, pair: Tuple[int, int]) -> float:
        return float(self.values[pair])


def build_distance_matrix(layout: NodeLayout, normalize: bool = True) -> DistanceMatrix:
    """Euclidean pairwise distances, optionally scaled so the furthest pair is 1."""
    if layout.distances is not None:
        D = layout.distances.copy()
    else:
        diff = layout.coords[:, None, :] - layout.coords[None, :, :]
        D = np.sqrt((diff * diff).sum(axis=-1))
    # a single node has nothing to normalise against
    if normalize and D.shape[0] > 1:
        largest = D.max()
        if largest <= 0:
            raise DegenerateGeometryError("cannot normalise distances: all nodes coincide")
        D = D / largest
    return DistanceMatrix(values=D, normalized=normalize)


@dataclass(frozen=True)
class CommGraph:
    """Communication tree: parents[v] is the vertex v transmits to, None for the root."""

    parents: Tuple[Optional[int], ...]

    @property
    def n_vertices(self) -> int:
        return len(self.parents)

    @property
    def root(self) -> int:
        roots = [v for v, p in enumerate(self.parents) if p is None]
        if len(roots) != 1:
            raise InvalidTopologyError(f"expected exactly one root, found {len(roots)}")
        return roots[0]

    @property
    def edges(self) -> List[Tuple[int, int]]:
        """(child, parent) pairs: child transmits to parent."""
        return [(v, p) for v, p in enumerate(self.parents) if p is not None]

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(self.n_vertices))
        g.add_edges_from(self.edges)
        return g

    def validate(self) -> "CommGraph":
        if self.n_vertices < 1:
            raise InvalidTopologyError("a communication graph needs at least one vertex")
        _ = self.root
        for v, p in self.edges:
            if not 0 <= p < self.n_vertices or p == v:
                raise InvalidTopologyError(f"vertex {v} transmits to invalid vertex {p}")
        if not nx.is_arborescence(self.to_networkx().reverse(copy=True)):
            raise InvalidTopologyError("communication graph must be a connected, acyclic tree")
        return self

    def subtree_sizes(self) -> Dict[int, int]:
        """Vertices whose data each vertex must transmit (itself plus everything it relays)."""
        g = self.to_networkx()
        return {v: 1 + len(nx.ancestors(g, v)) for v in range(self.n_vertices)}

    @classmethod
    def from_parents(cls, parents: Sequence[Optional[int]]) -> "CommGraph":
        return cls(parents=tuple(parents)).validate()

    @classmethod
    def star(cls, n_vertices: int, root: int = 0) -> "CommGraph":
        return cls.from_parents([None if v == root else root for v in range(n_vertices)])

    @classmethod
    def line(cls, n_vertices: int, root: int = 0) -> "CommGraph":
        """Chain towards `root`; with root 0, vertex k transmits to k - 1."""
        parents = [None if v == root else (v + 1 if v < root else v - 1) for v in range(n_vertices)]
        return cls.from_parents(parents)


@dataclass(frozen=True)
class BayesNet:
    """Transposed communication graph: each vertex is conditioned on parent_of[v]."""

    parent_of: Tuple[Optional[int], ...]
    children: Tuple[Tuple[int, ...], ...]
    order: Tuple[int, ...]
    root: int

    @property
    def n_vertices(self) -> int:
        return len(self.parent_of)

    def transpose(self) -> CommGraph:
        return CommGraph(parents=self.parent_of)


def transpose_to_bayesnet(graph: CommGraph) -> BayesNet:
    """Reverse the communication edges; emit a root-first topological order."""
    graph.validate()
    net = graph.to_networkx().reverse(copy=True)
    order = tuple(nx.lexicographical_topological_sort(net))
    children = tuple(tuple(sorted(net.successors(v))) for v in range(graph.n_vertices))
    return BayesNet(parent_of=graph.parents, children=children, order=order, root=graph.root)


def resolve_thresholds(
    graph: CommGraph,
    T: ThresholdLike,
    per_edge: Optional[Mapping[int, float]] = None,
    mode: str = "uniform",
) -> Dict[int, float]:
    """Threshold for every non-root vertex's edge to its parent."""
    if isinstance(T, Mapping):
        thresholds = {int(v): float(t) for v, t in T.items()}
        missing = [v for v, _ in graph.edges if v not in thresholds]
        if missing:
            raise ParameterError(f"no threshold given for vertices {missing}")
    else:
        if T < 0:
            raise ParameterError(f"threshold must be nonnegative, got {T}")
        per_edge = per_edge or {}
        thresholds = {v: float(per_edge.get(v, T)) for v, _ in graph.edges}
        if mode == "relay-load":
            sizes = graph.subtree_sizes()
            thresholds = {v: t / sizes[v] for v, t in thresholds.items()}
        elif mode != "uniform":
            raise ParameterError(f"unknown threshold mode '{mode}'")
    for v, t in thresholds.items():
        if not np.isfinite(t) or t < 0:
            raise ParameterError(f"threshold for vertex {v} must be nonnegative, got {t}")
    return thresholds


@dataclass(frozen=True, eq=False)
class FeasibilityMask:
    """Which node each vertex may take, given the node its parent took.

    cond_masks[v][i, j] is True when vertex v may take node j while its parent
    holds node i. Columns whose subtree cannot be completed are pruned, and
    root_mask drops root nodes for the same reason.
    """

    root_mask: np.ndarray
    cond_masks: Mapping[int, np.ndarray]
    thresholds: Mapping[int, float]
    root: int

    @property
    def n_nodes(self) -> int:
        return self.root_mask.shape[0]

    def n_allowed_pairs(self, vertex: int) -> int:
        return int(self.cond_masks[vertex].sum())


def build_masks(D: DistanceMatrix, net: BayesNet, T: ThresholdLike) -> FeasibilityMask:
    """Zero every conditional entry with D_ij > T, plus the diagonal."""
    thresholds = resolve_thresholds(net.transpose(), T)
    n = D.n_nodes
    off_diagonal = ~np.eye(n, dtype=bool)
    allowed = {v: (D.values <= t) & off_diagonal for v, t in thresholds.items()}

    support: Dict[int, np.ndarray] = {}
    for v in reversed(net.order):
        hosts = np.ones(n, dtype=bool)
        for child in net.children[v]:
            hosts &= (allowed[child] & support[child][None, :]).any(axis=1)
        if not hosts.any():
            logger.warning("masks_infeasible", vertex=v, thresholds=thresholds)
            raise InfeasibleConstraintsError(
                f"no node configuration satisfies the constraints: vertex {v} has no admissible node",
                vertex=v,
            )
        support[v] = hosts

    cond_masks = {v: allowed[v] & support[v][None, :] for v in thresholds}
    mask = FeasibilityMask(
        root_mask=support[net.root], cond_masks=cond_masks, thresholds=thresholds, root=net.root
    )
    logger.debug("masks_built",
        n_nodes=n,
        n_vertices=net.n_vertices,
        allowed_pairs={v: mask.n_allowed_pairs(v) for v in cond_masks},
        root_candidates=int(mask.root_mask.sum()),
    )
    return mask


def check_edges(sel: HardSelection, D: DistanceMatrix, graph: CommGraph, T: ThresholdLike) -> bool:
    """Every communicating pair lies within its threshold."""
    thresholds = resolve_thresholds(graph, T)
    return all(D.values[sel[v], sel[p]] <= thresholds[v] for v, p in graph.edges)


def check_selection(sel: HardSelection, D: DistanceMatrix, graph: CommGraph, T: ThresholdLike) -> bool:
    """Edge constraints hold and all assigned nodes are pairwise distinct."""
    if sel.n_vertices != graph.n_vertices or max(sel.assignment) >= D.n_nodes:
        return False
    return sel.is_distinct() and check_edges(sel, D, graph, T)


def enumerate_feasible(
    D: DistanceMatrix,
    graph: CommGraph,
    T: ThresholdLike,
    max_nodes: int = MAX_ENUM_NODES,
    max_vertices: int = MAX_ENUM_VERTICES,
) -> List[HardSelection]:
    """All distinct vertex -> node assignments passing check_selection, lexicographic order."""
    n, m = D.n_nodes, graph.n_vertices
    if n > max_nodes or m > max_vertices:
        raise SizeLimitError(f"enumeration limited to N <= {max_nodes}, M <= {max_vertices}; got N={n}, M={m}")
    thresholds = resolve_thresholds(graph, T)
    edges = graph.edges
    feasible = [
        HardSelection(assignment=combo)
        for combo in itertools.permutations(range(n), m)
        if all(D.values[combo[v], combo[p]] <= thresholds[v] for v, p in edges)
    ]
    logger.debug("feasible_enumerated", n_nodes=n, n_vertices=m, count=len(feasible))
    return feasible


@dataclass(frozen=True, eq=False)
class CommTopology:
    """Distances, communication graph and threshold policy bundled together."""

    distances: DistanceMatrix
    graph: CommGraph
    threshold: float = 1.0
    per_edge_thresholds: Mapping[int, float] = field(default_factory=dict)
    threshold_mode: str = "uniform"

    @property
    def net(self) -> BayesNet:
        return transpose_to_bayesnet(self.graph)

    def edge_thresholds(self, T: Optional[float] = None) -> Dict[int, float]:
        T = self.threshold if T is None else T
        return resolve_thresholds(self.graph, T, self.per_edge_thresholds, self.threshold_mode)

    def masks(self, T: Optional[float] = None) -> FeasibilityMask:
        return build_masks(self.distances, self.net, self.edge_thresholds(T))

    def check(self, sel: HardSelection, T: Optional[float] = None) -> bool:
        return check_selection(sel, self.distances, self.graph, self.edge_thresholds(T))

    def with_threshold(self, T: float) -> "CommTopology":
        return CommTopology(self.distances, self.graph, T, self.per_edge_thresholds, self.threshold_mode)

    def to_spec(self, T: Optional[float] = None) -> TopologySpec:
        """Self-contained spec with resolved per-edge thresholds; rebuilding it yields the same checks."""
        T = self.threshold if T is None else T
        return TopologySpec(
            distance_matrix=self.distances.values.tolist(),
            n_vertices=self.graph.n_vertices,
            kind="tree",
            parents=list(self.graph.parents),
            root=self.graph.root,
            threshold=T,
            per_edge_thresholds=self.edge_thresholds(T),
            normalize=False,
        )


def build_topology(spec: TopologySpec, coords: Optional[np.ndarray] = None) -> CommTopology:
    """Assemble a CommTopology from a topology file, falling back to task coordinates."""
    if spec.distance_matrix is not None:
        layout = NodeLayout(distances=np.array(spec.distance_matrix, dtype=np.float64))
    elif spec.coords is not None:
        layout = NodeLayout(coords=np.array(spec.coords, dtype=np.float64))
    elif coords is not None:
        layout = NodeLayout(coords=np.asarray(coords, dtype=np.float64))
    else:
        raise ParameterError("topology has no geometry: give coords, distance_matrix or a task layout")

    if spec.kind == "star":
        graph = CommGraph.star(spec.n_vertices, root=spec.root)
    elif spec.kind == "line":
        graph = CommGraph.line(spec.n_vertices, root=spec.root)
    else:
        graph = CommGraph.from_parents(spec.parents)

    return CommTopology(
        distances=build_distance_matrix(layout, normalize=spec.normalize),
        graph=graph,
        threshold=spec.threshold,
        per_edge_thresholds=dict(spec.per_edge_thresholds or {}),
        threshold_mode=spec.threshold_mode,
    )
