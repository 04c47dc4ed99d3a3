"""
Threshold sweeps: every method at every distance threshold and seed.

Cells are independent (method, seed) jobs. Methods whose result does not
depend on T (the unconstrained reference) or that can reuse one enumeration
for every T (the oracle) run once per seed and emit one row per threshold.
Rows are assembled in (T, method, seed) order regardless of --jobs.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
import structlog
from pydantic import BaseModel, Field

from ..models.dataset import Dataset
from ..models.domain import EvaluatorKind, HardSelection, MethodName, SweepRow, TrainConfig
from ..models.errors import InfeasibleConstraintsError, InfeasibleSelectionError, SelectionError, SizeLimitError
from ..utils.topology_utils import CommTopology
from .baseline_service import best_of, greedy_constrained_select, mi_rank, score_feasible, selection_from_result
from .training_service import TaskLike, as_dataset, make_evaluator, train

logger = structlog.get_logger()

METHOD_ORDER: Tuple[MethodName, ...] = ("conditional", "greedy-mi", "oracle", "vanilla")


class SweepReport(BaseModel):
    """All sweep rows plus the grid they were run on."""

    thresholds: List[float]
    methods: List[MethodName]
    seeds: List[int]
    rows: List[SweepRow] = Field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        columns = [field.serialization_alias or name for name, field in SweepRow.model_fields.items()]
        frame = pd.DataFrame([row.model_dump(by_alias=True) for row in self.rows], columns=columns)
        frame["selection"] = frame["selection"].map(
            lambda s: " ".join(str(i) for i in s) if isinstance(s, list) else ""
        )
        return frame

    def summary(self) -> pd.DataFrame:
        """Mean and standard deviation of test accuracy per (T, method)."""
        frame = self.to_frame()
        ok = frame[frame["status"] == "ok"]
        stats = (
            ok.groupby(["T", "method"], sort=False)["test_accuracy"]
            .agg(mean="mean", std="std", n="count")
            .reset_index()
        )
        grid = pd.MultiIndex.from_product([self.thresholds, self.methods], names=["T", "method"])
        return stats.set_index(["T", "method"]).reindex(grid).reset_index()

    def long_format(self) -> pd.DataFrame:
        """Plot-ready table: one (T, method, statistic, value) per line."""
        return self.summary().melt(
            id_vars=["T", "method"], value_vars=["mean", "std", "n"],
            var_name="statistic", value_name="value",
        )


def _timed(record_timing: bool, started: float) -> Optional[float]:
    return round(time.perf_counter() - started, 6) if record_timing else None


def _failed_rows(method: MethodName, seed: int, thresholds: Sequence[float], status: str, error: str) -> List[SweepRow]:
    return [SweepRow(threshold=T, method=method, seed=seed, status=status, error=error) for T in thresholds]


def run_cell(
    dataset: Dataset,
    topology: CommTopology,
    method: MethodName,
    seed: int,
    thresholds: Sequence[float],
    train_config: TrainConfig,
    evaluator_kind: EvaluatorKind = "classifier",
    mi_bins: int = 8,
    record_timing: bool = False,
) -> List[SweepRow]:
    """One method at one seed across the given thresholds. Top-level so worker processes can run it."""
    # distinct selections keep every method inside the oracle's candidate set
    config = train_config.model_copy(update={"seed": seed, "distinct_inference": True})
    evaluator = make_evaluator(evaluator_kind, dataset, config)
    rows: List[SweepRow] = []

    def scored_row(T: float, selection: HardSelection, started: float, epochs_ran: Optional[int] = None) -> SweepRow:
        return SweepRow(
            threshold=T, method=method, seed=seed, status="ok",
            test_accuracy=evaluator(selection), selection=list(selection.assignment),
            epochs_ran=epochs_ran, wall_time=_timed(record_timing, started),
        )

    if method == "vanilla":
        started = time.perf_counter()
        model = train(dataset, topology, "independent", config)
        row = scored_row(thresholds[0], model.selection, started, model.epochs_ran)
        return [row.model_copy(update={"threshold": T}) for T in thresholds]

    if method == "oracle":
        started = time.perf_counter()
        try:
            scored = score_feasible(topology.distances, topology.graph, topology.edge_thresholds(max(thresholds)), evaluator)
        except SizeLimitError as e:
            return _failed_rows(method, seed, thresholds, "failed", str(e))
        elapsed = _timed(record_timing, started)
        for T in thresholds:
            allowed = [(sel, s) for sel, s in scored if topology.check(sel, T)]
            if not allowed:
                rows.append(SweepRow(threshold=T, method=method, seed=seed, status="infeasible",
                                     error="no feasible configuration"))
                continue
            selection, score = best_of(allowed)
            rows.append(SweepRow(threshold=T, method=method, seed=seed, status="ok", test_accuracy=score,
                                 selection=list(selection.assignment), wall_time=elapsed))
        return rows

    ranking = mi_rank(dataset.split(seed)[0], bins=mi_bins) if method == "greedy-mi" else None
    for T in thresholds:
        started = time.perf_counter()
        cell = topology.with_threshold(T)
        try:
            if method == "greedy-mi":
                result = greedy_constrained_select(ranking, cell.distances, cell.graph, cell.edge_thresholds())
                selection = selection_from_result(result)
                if selection is None:
                    rows.append(SweepRow(threshold=T, method=method, seed=seed, status="infeasible", error=result.error))
                    continue
                rows.append(scored_row(T, selection, started))
            else:
                model = train(dataset, cell, "conditional", config)
                rows.append(scored_row(T, model.selection, started, model.epochs_ran))
        except (InfeasibleConstraintsError, InfeasibleSelectionError) as e:
            rows.append(SweepRow(threshold=T, method=method, seed=seed, status="infeasible", error=str(e)))
        except SelectionError as e:
            logger.error("sweep_cell_failed", method=method, seed=seed, threshold=T, error=str(e))
            rows.append(SweepRow(threshold=T, method=method, seed=seed, status="failed", error=str(e)))
    return rows


class SweepService:
    """
    Runs a threshold sweep for one task and one communication topology.

    Usage:
        service = SweepService(task, topology, thresholds=[0.3, 0.5], seeds=range(3))
        report = service.run()
    """

    def __init__(
        self,
        task: TaskLike,
        topology: CommTopology,
        thresholds: Sequence[float],
        methods: Sequence[MethodName] = METHOD_ORDER,
        seeds: Sequence[int] = tuple(range(10)),
        train_config: Optional[TrainConfig] = None,
        evaluator: EvaluatorKind = "classifier",
        mi_bins: int = 8,
        jobs: int = 1,
        record_timing: bool = False,
    ):
        thresholds = [float(t) for t in thresholds]
        if not thresholds:
            raise SelectionError("a sweep needs at least one threshold")
        if thresholds != sorted(thresholds):
            raise SelectionError("thresholds must be sorted ascending")
        self.dataset = as_dataset(task)
        self.topology = topology
        self.thresholds = thresholds
        self.methods = [m for m in METHOD_ORDER if m in set(methods)]
        self.seeds = list(seeds)
        self.train_config = train_config or TrainConfig()
        self.evaluator = evaluator
        self.mi_bins = mi_bins
        self.jobs = jobs
        self.record_timing = record_timing
        logger.info("sweep_service_initialized",
            thresholds=self.thresholds,
            methods=self.methods,
            n_seeds=len(self.seeds),
            jobs=jobs,
        )

    def _cells(self) -> List[Tuple[MethodName, int]]:
        return [(method, seed) for method in self.methods for seed in self.seeds]

    def _cell_args(self, method: MethodName, seed: int) -> tuple:
        return (self.dataset, self.topology, method, seed, self.thresholds, self.train_config,
                self.evaluator, self.mi_bins, self.record_timing)

    def run(self) -> SweepReport:
        cells = self._cells()
        if self.jobs > 1:
            with ProcessPoolExecutor(max_workers=self.jobs) as pool:
                futures = [pool.submit(run_cell, *self._cell_args(m, s)) for m, s in cells]
                results = [future.result() for future in futures]
        else:
            results = [run_cell(*self._cell_args(m, s)) for m, s in cells]

        by_key: Dict[Tuple[float, str, int], SweepRow] = {}
        for rows in results:
            for row in rows:
                by_key[(row.threshold, row.method, row.seed)] = row
        ordered = [
            by_key[(T, method, seed)]
            for T in self.thresholds for method in self.methods for seed in self.seeds
        ]
        report = SweepReport(thresholds=self.thresholds, methods=self.methods, seeds=self.seeds, rows=ordered)
        logger.info("sweep_completed",
            n_rows=len(ordered),
            n_infeasible=sum(r.status == "infeasible" for r in ordered),
            n_failed=sum(r.status == "failed" for r in ordered),
        )
        return report


def sweep_threshold(
    task: TaskLike,
    topology: CommTopology,
    T_values: Sequence[float],
    methods: Sequence[MethodName] = METHOD_ORDER,
    config: Optional[TrainConfig] = None,
    seeds: Sequence[int] = tuple(range(10)),
    **options,
) -> SweepReport:
    return SweepService(task, topology, T_values, methods, seeds, config, **options).run()
