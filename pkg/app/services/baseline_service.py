"""
Filter baseline and exhaustive oracle for constrained node selection.

BASELINE POLICY:
================
1. Nodes are ranked by the mutual information between a per-trial summary
   (log-variance over the node's features) and the class label.
2. The greedy filter fills communication-graph vertices in topological order;
   each vertex re-scans the ranking from the top and binds the first unused
   node that respects the edge to its parent and still admits a completion.
3. The oracle scores every feasible configuration with one evaluator and
   keeps the best; ties go to the lexicographically smallest configuration.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
import structlog
from sklearn.metrics import mutual_info_score

from ..models.dataset import Dataset
from ..models.domain import HardSelection, OperationResult, TrainConfig
from ..models.errors import InfeasibleConstraintsError, ParameterError
from ..utils.topology_utils import (
    CommGraph,
    DistanceMatrix,
    ThresholdLike,
    enumerate_feasible,
    resolve_thresholds,
    transpose_to_bayesnet,
)
from .training_service import ClassifierEvaluator, Evaluator, TaskLike, as_dataset

logger = structlog.get_logger()

SUMMARY_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class MIRanking:
    """Mutual information per node (nats) and the nodes sorted by it."""

    scores: np.ndarray
    order: Tuple[int, ...]

    @property
    def n_nodes(self) -> int:
        return len(self.order)


def log_variance_summary(dataset: Dataset) -> np.ndarray:
    """(S, N) log of each node's variance across its L features, per trial."""
    return np.log(dataset.X.var(axis=2) + SUMMARY_EPS)


def equal_frequency_bins(values: np.ndarray, bins: int) -> np.ndarray:
    """Bin index per value so each bin holds roughly the same count; ties share a bin."""
    ranks = pd.Series(values).rank(method="min").to_numpy()
    return np.minimum(((ranks - 1) * bins / len(values)).astype(np.int64), bins - 1)


def mi_rank(dataset: TaskLike, bins: int = 8) -> MIRanking:
    dataset = as_dataset(dataset)
    if dataset.n_samples == 0:
        raise ParameterError("cannot rank nodes of an empty dataset")
    if bins < 2:
        raise ParameterError(f"bins must be >= 2, got {bins}")
    summary = log_variance_summary(dataset)
    scores = np.array([
        mutual_info_score(dataset.y, equal_frequency_bins(summary[:, n], bins))
        for n in range(dataset.n_nodes)
    ])
    order = tuple(int(i) for i in np.lexsort((np.arange(len(scores)), -scores)))
    logger.debug("mi_ranking_computed", order=order, top_score=float(scores.max()))
    return MIRanking(scores=scores, order=order)


def _completable(
    pending: Sequence[int],
    assignment: Dict[int, int],
    used: Set[int],
    parents: Sequence[Optional[int]],
    thresholds: Dict[int, float],
    D: np.ndarray,
) -> bool:
    """Depth-first search for any completion of the pending vertices with unused nodes."""
    if not pending:
        return True
    v, rest = pending[0], pending[1:]
    anchor = assignment[parents[v]]
    for node in range(D.shape[0]):
        if node in used or D[node, anchor] > thresholds[v]:
            continue
        assignment[v] = node
        used.add(node)
        ok = _completable(rest, assignment, used, parents, thresholds, D)
        used.discard(node)
        del assignment[v]
        if ok:
            return True
    return False


def greedy_constrained_select(
    ranking: MIRanking,
    D: DistanceMatrix,
    graph: CommGraph,
    T: ThresholdLike,
    M: Optional[int] = None,
) -> OperationResult:
    """
    Greedy MI filter under the distance constraints.

    Returns:
        OperationResult with data {"selection": [...]} on success, or
        success=False and an error message when the scan runs out of nodes
    """
    net = transpose_to_bayesnet(graph)
    if M is not None and M != graph.n_vertices:
        raise ParameterError(f"M={M} does not match the {graph.n_vertices}-vertex communication graph")
    if ranking.n_nodes != D.n_nodes:
        raise ParameterError(f"ranking covers {ranking.n_nodes} nodes, distances cover {D.n_nodes}")
    if graph.n_vertices > D.n_nodes:
        return OperationResult(success=False, error=f"cannot place {graph.n_vertices} vertices on {D.n_nodes} nodes")

    thresholds = resolve_thresholds(graph, T)
    parents = graph.parents
    assignment: Dict[int, int] = {}
    used: Set[int] = set()

    for position, v in enumerate(net.order):
        pending = net.order[position + 1:]
        bound = False
        for node in ranking.order:
            if node in used:
                continue
            if parents[v] is not None and D.values[node, assignment[parents[v]]] > thresholds[v]:
                continue
            assignment[v] = node
            used.add(node)
            if _completable(pending, assignment, used, parents, thresholds, D.values):
                bound = True
                break
            used.discard(node)
            del assignment[v]
        if not bound:
            logger.info("greedy_selection_failed", vertex=v, partial=dict(assignment))
            return OperationResult(success=False, error=f"no feasible node left for vertex {v}")

    selection = [assignment[v] for v in range(graph.n_vertices)]
    logger.info("greedy_selection_completed", selection=selection)
    return OperationResult(success=True, data={"selection": selection})


def selection_from_result(result: OperationResult) -> Optional[HardSelection]:
    if not result.success:
        return None
    return HardSelection(assignment=tuple(result.data["selection"]))


def score_feasible(
    D: DistanceMatrix,
    graph: CommGraph,
    T: ThresholdLike,
    evaluator: Evaluator,
    jobs: int = 1,
) -> List[Tuple[HardSelection, float]]:
    """Evaluator score for every feasible configuration, in lexicographic order."""
    candidates = enumerate_feasible(D, graph, T)
    if jobs > 1 and len(candidates) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(evaluator, candidates))
    else:
        scores = [evaluator(sel) for sel in candidates]
    return list(zip(candidates, (float(s) for s in scores)))


def best_of(scored: Sequence[Tuple[HardSelection, float]]) -> Tuple[HardSelection, float]:
    """Highest score; the first (lexicographically smallest) configuration wins ties."""
    if not scored:
        raise InfeasibleConstraintsError("no feasible configuration to evaluate")
    best = scored[0]
    for item in scored[1:]:
        if item[1] > best[1]:
            best = item
    return best


def oracle_search(
    dataset: TaskLike,
    D: DistanceMatrix,
    graph: CommGraph,
    T: ThresholdLike,
    M: Optional[int] = None,
    evaluator: Optional[Evaluator] = None,
    jobs: int = 1,
    config: Optional[TrainConfig] = None,
) -> Tuple[HardSelection, float]:
    """Exhaustive search over feasible configurations (small N only)."""
    if M is not None and M != graph.n_vertices:
        raise ParameterError(f"M={M} does not match the {graph.n_vertices}-vertex communication graph")
    evaluator = evaluator or ClassifierEvaluator(dataset, config or TrainConfig())
    scored = score_feasible(D, graph, T, evaluator, jobs=jobs)
    if not scored:
        logger.warning("oracle_no_feasible_configuration", n_nodes=D.n_nodes, n_vertices=graph.n_vertices)
    selection, score = best_of(scored)
    logger.info("oracle_search_completed",
        n_candidates=len(scored),
        selection=selection.assignment,
        score=score,
    )
    return selection, score
