"""Command-line entry point for constrained node selection experiments."""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, List, Optional

import pandas as pd
import structlog
from dotenv import load_dotenv
from pydantic import ValidationError

from .config.presets import get_preset, preset_names
from .config.settings import Settings
from .db.storage import (
    load_experiment,
    load_model,
    load_task,
    load_topology,
    save_model,
    save_report,
    save_rows,
    save_task,
)
from .models.dataset import SyntheticTask
from .models.domain import ExperimentConfig, HardSelection, TopologySpec, TrainConfig
from .models.errors import InfeasibleConstraintsError, ParameterError, SelectionError
from .services.baseline_service import greedy_constrained_select, mi_rank, oracle_search
from .services.sweep_service import METHOD_ORDER, SweepService
from .services.training_service import make_evaluator, train
from .utils.arch_utils import MSFBCNN, arch_calc
from .utils.synth_utils import task_from_spec
from .utils.topology_utils import CommTopology, build_topology

logger = structlog.get_logger()


class UsageError(Exception):
    """Invalid combination of command-line arguments (exit code 2)."""


class StderrHandler(logging.StreamHandler):
    """Writes to whatever sys.stderr is when a record is emitted."""

    def __init__(self):
        super().__init__(sys.stderr)

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


def configure_logging(level: Optional[str] = None, fmt: Optional[str] = None):
    """structlog over stdlib logging on stderr; stdout stays reserved for command output."""
    level = level or Settings.get_log_level()
    fmt = fmt or Settings.get_log_format()
    root = logging.getLogger()
    root.setLevel(getattr(logging, level, logging.INFO))
    if not any(isinstance(h, StderrHandler) for h in root.handlers):
        handler = StderrHandler()
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)
    renderer = structlog.dev.ConsoleRenderer() if fmt == "console" else structlog.processors.JSONRenderer()
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            renderer,
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )


def _emit(data: Any):
    print(json.dumps(data, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Argument resolution
# ---------------------------------------------------------------------------

def _experiment(args) -> ExperimentConfig:
    return load_experiment(args.config) if getattr(args, "config", None) else ExperimentConfig()


def resolve_task(args, experiment: ExperimentConfig) -> SyntheticTask:
    if getattr(args, "task", None):
        return load_task(args.task)
    if getattr(args, "preset", None):
        return task_from_spec(get_preset(args.preset, seed=args.seed))
    if experiment.task_path:
        return load_task(experiment.task_path)
    if experiment.task is not None:
        return task_from_spec(experiment.task)
    if experiment.preset:
        if experiment.preset not in preset_names():
            raise UsageError(f"unknown preset '{experiment.preset}'")
        return task_from_spec(get_preset(experiment.preset, seed=args.seed))
    raise UsageError("no task given: use --task, --preset or a config file with a task")


def resolve_topology(args, experiment: ExperimentConfig, task: SyntheticTask) -> CommTopology:
    value = getattr(args, "topology", None)
    if value in ("star", "line"):
        if args.M is None:
            raise UsageError(f"--topology {value} needs --M")
        spec = TopologySpec(n_vertices=args.M, kind=value, root=args.root)
    elif value:
        spec = load_topology(value)
    elif experiment.topology_path:
        spec = load_topology(experiment.topology_path)
    elif experiment.topology is not None:
        spec = experiment.topology
    else:
        raise UsageError("no topology given: use --topology star|line|<file> or a config file")

    overrides = {}
    if args.M is not None and value not in ("star", "line"):
        overrides["n_vertices"] = args.M
    if getattr(args, "threshold", None) is not None:
        overrides["threshold"] = args.threshold
    if overrides:
        spec = TopologySpec.model_validate({**spec.model_dump(), **overrides})

    topology = build_topology(spec, coords=task.coords)
    if topology.distances.n_nodes != task.dataset.n_nodes:
        raise ParameterError(
            f"topology has {topology.distances.n_nodes} nodes, task has {task.dataset.n_nodes}"
        )
    return topology


def _train_config(args, experiment: ExperimentConfig):
    updates = {"seed": args.seed}
    if getattr(args, "epochs", None) is not None:
        updates["epochs"] = args.epochs
    return TrainConfig.model_validate({**experiment.train.model_dump(), **updates})


def _out_dir(args) -> Path:
    return Path(args.out or Settings.get_output_dir())


def _jobs(args) -> int:
    if args.jobs:
        return args.jobs
    return _experiment(args).jobs if args.config else Settings.get_jobs()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.preset:
        spec = get_preset(args.preset, seed=args.seed)
        name = args.name or args.preset
    else:
        experiment = _experiment(args)
        if experiment.task is None:
            raise UsageError("generate needs --preset or a config file with a [task] table")
        spec = experiment.task.model_copy(update={"seed": args.seed})
        name = args.name or "task"
    task = task_from_spec(spec)
    paths = save_task(task, _out_dir(args) / name)
    _emit({k: str(v) for k, v in paths.items()})
    return 0


def cmd_train(args) -> int:
    experiment = _experiment(args)
    task = resolve_task(args, experiment)
    config = _train_config(args, experiment)
    if args.layer == "conditional" or args.topology or experiment.topology or experiment.topology_path:
        topology = resolve_topology(args, experiment, task)
    else:
        topology = None
        if args.M is None:
            raise UsageError("unconstrained training needs --M or a topology")
    model = train(task, topology, args.layer, config, n_vertices=args.M)
    path = save_model(model, _out_dir(args) / "model.json")
    _emit({
        "model": str(path),
        "selection": list(model.selection.assignment),
        "test_accuracy": model.test_accuracy,
        "feasible": model.feasible,
        "epochs_ran": model.epochs_ran,
    })
    return 0


def cmd_select(args) -> int:
    model = load_model(args.model)
    selection = model.selection
    if args.distinct and model.layer_kind != "fixed":
        selection = model.layer.infer(distinct=True)
    verdict = model.check(selection, edges_only=True)
    _emit({
        "layer": model.layer_kind,
        "selection": list(selection.assignment),
        "distinct": selection.is_distinct(),
        "verdict": "unconstrained" if verdict is None else ("feasible" if verdict else "infeasible"),
    })
    return 0


def cmd_sweep(args) -> int:
    experiment = _experiment(args)
    task = resolve_task(args, experiment)
    topology = resolve_topology(args, experiment, task)
    config = _train_config(args, experiment)
    thresholds = sorted(args.thresholds) if args.thresholds else experiment.thresholds
    methods = args.methods or experiment.methods
    seeds = [args.seed + i for i in range(args.seeds)] if args.seeds else experiment.seeds
    jobs = _jobs(args)

    feasible = []
    for T in thresholds:
        try:
            topology.masks(T)
            feasible.append(T)
        except InfeasibleConstraintsError:
            continue
    if not feasible:
        raise InfeasibleConstraintsError(f"the topology is infeasible at every threshold {thresholds}")

    report = SweepService(
        task, topology, thresholds, methods=methods, seeds=seeds, train_config=config,
        evaluator=args.evaluator or experiment.evaluator, mi_bins=experiment.mi_bins,
        jobs=jobs, record_timing=args.record_timing or experiment.record_timing,
    ).run()
    out_dir = Path(args.out or experiment.output_dir)
    paths = save_report(report, out_dir)
    _emit({k: str(v) for k, v in paths.items()})
    return 0


def _baseline_row(T: float, method: str, selection, score, started: float, record_timing: bool) -> dict:
    return {
        "T": T,
        "method": method,
        "selection": " ".join(str(i) for i in selection) if selection is not None else "",
        "score": score,
        "wall_time": round(time.perf_counter() - started, 6) if record_timing else None,
    }


def cmd_oracle(args) -> int:
    experiment = _experiment(args)
    task = resolve_task(args, experiment)
    topology = resolve_topology(args, experiment, task)
    config = _train_config(args, experiment)
    evaluator = make_evaluator(args.evaluator or experiment.evaluator, task, config)
    started = time.perf_counter()
    selection, score = oracle_search(task, topology.distances, topology.graph, topology.edge_thresholds(),
                                     evaluator=evaluator, jobs=_jobs(args))
    row = _baseline_row(topology.threshold, "oracle", selection.assignment, score, started, args.record_timing)
    save_rows([row], _out_dir(args) / "oracle.csv")
    _emit({"selection": list(selection.assignment), "score": score, "threshold": topology.threshold})
    return 0


def cmd_baseline(args) -> int:
    experiment = _experiment(args)
    task = resolve_task(args, experiment)
    topology = resolve_topology(args, experiment, task)
    config = _train_config(args, experiment)
    started = time.perf_counter()
    ranking = mi_rank(task.dataset.split(config.seed)[0], bins=args.bins or experiment.mi_bins)
    result = greedy_constrained_select(ranking, topology.distances, topology.graph, topology.edge_thresholds())
    selection = result.data["selection"] if result.success else None
    score = None
    if selection is not None and not args.no_score:
        evaluator = make_evaluator(args.evaluator or experiment.evaluator, task, config)
        score = evaluator(HardSelection(assignment=tuple(selection)))
    row = _baseline_row(topology.threshold, "greedy-mi", selection, score, started, args.record_timing)
    save_rows([row], _out_dir(args) / "baseline.csv")
    _emit({
        "ranking": list(ranking.order),
        "mi": [round(float(s), 6) for s in ranking.scores],
        "success": result.success,
        "selection": selection,
        "score": score,
        "error": result.error,
    })
    return 0 if result.success else 1


def cmd_arch_calc(args) -> int:
    report = arch_calc(MSFBCNN, C=args.C, T=args.T, F_T=args.F_T, F_S=args.F_S, N_C=args.N_C)
    table = pd.DataFrame([
        {"layer": l["layer"], "params_formula": l["params_formula"], "params": l["params"],
         "output_formula": l["output_formula"], "output": "x".join(str(d) for d in l["output"])}
        for l in report.layers
    ])
    print(table.to_string(index=False))
    print(f"total_params: {report.total_params}")
    for note in report.notes:
        print(f"note: {note}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common(parser: argparse.ArgumentParser, task: bool = True, topology: bool = True):
    parser.add_argument("--seed", type=int, default=Settings.get_default_seed())
    parser.add_argument("--out", help="Output directory (default: $CGS_OUTPUT_DIR or ./runs)")
    parser.add_argument("--config", help="Experiment file (.toml or .json)")
    if task:
        parser.add_argument("--task", help="Task CSV written by `generate`")
        parser.add_argument("--preset", choices=preset_names())
    if topology:
        parser.add_argument("--topology", help="star, line or a topology file (.toml or .json)")
        parser.add_argument("--M", type=int, help="Communication-graph vertex count")
        parser.add_argument("--root", type=int, default=0)
        parser.add_argument("--threshold", type=float, help="Distance threshold T")
        parser.add_argument("--epochs", type=int)
        parser.add_argument("--jobs", type=int, default=None)
        parser.add_argument("--evaluator", choices=["classifier", "linear-probe"])
        parser.add_argument("--record-timing", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgs", description="Constrained node selection experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="Write a planted synthetic task")
    _common(p, task=False, topology=False)
    p.add_argument("--preset", choices=preset_names())
    p.add_argument("--name", help="File stem (default: the preset name)")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("train", help="Train a selection layer with the classifier")
    _common(p)
    p.add_argument("--layer", choices=["independent", "conditional"], default="conditional")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("sweep", help="Run every method across distance thresholds")
    _common(p)
    p.add_argument("--thresholds", type=float, nargs="+")
    p.add_argument("--methods", nargs="+", choices=list(METHOD_ORDER))
    p.add_argument("--seeds", type=int, help="Number of seeds, starting at --seed")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("select", help="Print the selection stored in a trained model")
    p.add_argument("model", help="model.json written by `train`")
    p.add_argument("--distinct", action="store_true", help="Skip nodes already chosen")
    p.set_defaults(handler=cmd_select)

    p = sub.add_parser("oracle", help="Exhaustive best feasible selection")
    _common(p)
    p.set_defaults(handler=cmd_oracle)

    p = sub.add_parser("baseline", help="Greedy mutual-information filter")
    _common(p)
    p.add_argument("--bins", type=int)
    p.add_argument("--no-score", action="store_true", help="Skip evaluating the selection")
    p.set_defaults(handler=cmd_baseline)

    p = sub.add_parser("arch-calc", help="Parameter counts of the filter-bank CNN classifier")
    for name in ("C", "T", "F_T", "F_S", "N_C"):
        p.add_argument(f"--{name}", type=int, required=True)
    p.set_defaults(handler=cmd_arch_calc)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        return args.handler(args)
    except UsageError as e:
        print(f"{parser.prog} {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (SelectionError, OSError, ValidationError) as e:
        logger.error("command_failed", command=args.command, error=str(e), error_type=type(e).__name__)
        print(f"{parser.prog} {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
