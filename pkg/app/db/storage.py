"""
File storage for tasks, trained models, topologies and sweep reports.

STORAGE POLICY:
===============
1. Task data is CSV with one column per (node, feature) pair named
   n{node}_f{feature}, in node-major order, plus a `label` column.
   Floats are written with 17 significant digits so reloads are exact.
2. Task metadata (layout, informative sets, snr, seed) is a JSON file next
   to the CSV, with the same stem.
3. Configuration files are TOML or JSON, chosen by file extension.
4. Every writer is deterministic: same inputs, byte-identical files.
"""

import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, Field, model_validator

from ..models.dataset import Dataset, SyntheticTask
from ..models.domain import ExperimentConfig, TopologySpec
from ..models.errors import IngestionError
from ..services.sweep_service import SweepReport
from ..services.training_service import TrainedModel

logger = structlog.get_logger()

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"
LABEL_COLUMN = "label"


def feature_column(node: int, feature: int) -> str:
    return f"n{node}_f{feature}"


class TabularSchema(BaseModel):
    """How a CSV maps onto per-node features and a label."""

    n_nodes: int = Field(..., ge=1)
    n_features: int = Field(..., ge=1)
    n_classes: int = Field(..., ge=2)
    label_column: str = LABEL_COLUMN
    feature_columns: Optional[List[str]] = Field(
        None, description="Node-major column names; defaults to n{node}_f{feature}"
    )

    @model_validator(mode="after")
    def validate_columns(self):
        if self.feature_columns is not None and len(self.feature_columns) != self.n_nodes * self.n_features:
            raise ValueError("feature_columns must list n_nodes * n_features names")
        return self

    def columns(self) -> List[str]:
        if self.feature_columns is not None:
            return list(self.feature_columns)
        return [feature_column(n, l) for n in range(self.n_nodes) for l in range(self.n_features)]


def _write_json(data: Any, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_config_file(path: PathLike) -> Dict[str, Any]:
    """Parse a TOML or JSON file into a dict."""
    path = Path(path)
    if path.suffix == ".toml":
        with path.open("rb") as f:
            return tomllib.load(f)
    if path.suffix == ".json":
        return json.loads(path.read_text())
    raise IngestionError(f"unsupported config format '{path.suffix}' (use .toml or .json)")


def load_topology(path: PathLike) -> TopologySpec:
    return TopologySpec.model_validate(read_config_file(path))


def load_experiment(path: PathLike) -> ExperimentConfig:
    return ExperimentConfig.model_validate(read_config_file(path))


# ---------------------------------------------------------------------------
# Datasets and tasks
# ---------------------------------------------------------------------------

def dataset_frame(dataset: Dataset) -> pd.DataFrame:
    schema = TabularSchema(n_nodes=dataset.n_nodes, n_features=dataset.n_features, n_classes=dataset.n_classes)
    frame = pd.DataFrame(dataset.X.reshape(dataset.n_samples, -1), columns=schema.columns())
    frame[LABEL_COLUMN] = dataset.y
    return frame


def save_task(task: SyntheticTask, path: PathLike) -> Dict[str, Path]:
    """Write `<stem>.csv` and `<stem>.json`; returns both paths."""
    csv_path = Path(path).with_suffix(".csv")
    meta_path = csv_path.with_suffix(".json")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    dataset_frame(task.dataset).to_csv(csv_path, index=False, float_format=FLOAT_FORMAT)
    metadata = {
        "n_nodes": task.dataset.n_nodes,
        "n_features": task.dataset.n_features,
        "n_classes": task.dataset.n_classes,
        "n_samples": task.dataset.n_samples,
        "coords": task.coords.tolist(),
        "informative_sets": [list(s) for s in task.informative_sets],
        "snr": task.snr,
        "seed": task.seed,
        "self_check_accuracy": task.self_check_accuracy,
        **task.metadata,
    }
    _write_json(metadata, meta_path)
    logger.info("task_saved", csv=str(csv_path), metadata=str(meta_path), n_samples=task.dataset.n_samples)
    return {"csv": csv_path, "metadata": meta_path}


def load_tabular(path: PathLike, schema: TabularSchema) -> Dataset:
    """
    Read a CSV dataset according to `schema`.

    Raises:
        IngestionError: empty file, missing columns, non-numeric cells or
            labels outside [0, n_classes); row numbers count data rows from 1
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise IngestionError(f"file not found: {path}") from None
    except pd.errors.EmptyDataError:
        raise IngestionError(f"file is empty: {path}") from None
    if frame.empty:
        raise IngestionError(f"file has no data rows: {path}")

    columns = schema.columns()
    missing = [c for c in columns + [schema.label_column] if c not in frame.columns]
    if missing:
        raise IngestionError(f"missing columns {missing[:5]}{'...' if len(missing) > 5 else ''}")

    values = frame[columns].apply(pd.to_numeric, errors="coerce")
    bad = values.isna().any(axis=1) | ~np.isfinite(values.fillna(0.0)).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        column = next(c for c in columns if not np.isfinite(pd.to_numeric(frame[c].iloc[row], errors="coerce")))
        raise IngestionError(f"non-numeric value '{frame[column].iloc[row]}' in column {column}", row=row + 1)

    labels = pd.to_numeric(frame[schema.label_column], errors="coerce").to_numpy()
    for row, label in enumerate(labels):
        if not np.isfinite(label) or label != int(label) or not 0 <= label < schema.n_classes:
            raise IngestionError(
                f"label '{frame[schema.label_column].iloc[row]}' outside classes 0..{schema.n_classes - 1}",
                row=row + 1,
            )

    # exact parse of the 17-digit text; pd.to_numeric can be off by one ulp
    X = np.asarray(frame[columns].to_numpy(), dtype=np.float64)
    X = X.reshape(len(frame), schema.n_nodes, schema.n_features)
    logger.info("tabular_loaded", path=str(path), n_samples=len(frame), n_nodes=schema.n_nodes)
    return Dataset(X=X, y=labels.astype(np.int64), n_classes=schema.n_classes)


def load_task(path: PathLike) -> SyntheticTask:
    """Reload a task written by save_task (metadata JSON must sit next to the CSV)."""
    csv_path = Path(path).with_suffix(".csv")
    meta_path = csv_path.with_suffix(".json")
    try:
        metadata = json.loads(meta_path.read_text())
    except FileNotFoundError:
        raise IngestionError(f"task metadata not found: {meta_path}") from None
    except json.JSONDecodeError as e:
        raise IngestionError(f"task metadata is not valid JSON: {e}") from None
    schema = TabularSchema(
        n_nodes=metadata["n_nodes"], n_features=metadata["n_features"], n_classes=metadata["n_classes"]
    )
    dataset = load_tabular(csv_path, schema)
    known = {"n_nodes", "n_features", "n_classes", "n_samples", "coords", "informative_sets",
             "snr", "seed", "self_check_accuracy"}
    return SyntheticTask(
        dataset=dataset,
        coords=np.array(metadata["coords"], dtype=np.float64),
        informative_sets=[tuple(s) for s in metadata["informative_sets"]],
        snr=metadata["snr"],
        seed=metadata["seed"],
        metadata={k: v for k, v in metadata.items() if k not in known},
        self_check_accuracy=metadata.get("self_check_accuracy"),
    )


# ---------------------------------------------------------------------------
# Models and reports
# ---------------------------------------------------------------------------

def save_model(model: TrainedModel, path: PathLike) -> Path:
    path = Path(path)
    _write_json(model.to_dict(), path)
    curves_path = path.with_name(path.stem + "_curves.csv")
    model.curves_frame().to_csv(curves_path, index=False, float_format=FLOAT_FORMAT)
    logger.info("model_saved", path=str(path), curves=str(curves_path))
    return path


def load_model(path: PathLike) -> TrainedModel:
    """Reload a model written by save_model; a missing file raises FileNotFoundError."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise IngestionError(f"corrupt model file {path}: {e}") from None
    try:
        return TrainedModel.from_dict(data)
    except (KeyError, TypeError, ValueError) as e:
        raise IngestionError(f"corrupt model file {path}: {e}") from None


def save_report(report: SweepReport, out_dir: PathLike, stem: str = "sweep") -> Dict[str, Path]:
    """CSV rows, the JSON report and a long-format summary table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out_dir / f"{stem}.csv",
        "json": out_dir / f"{stem}.json",
        "long": out_dir / f"{stem}_long.csv",
    }
    report.to_frame().to_csv(paths["csv"], index=False, float_format=FLOAT_FORMAT)
    _write_json(report.model_dump(mode="json", by_alias=True), paths["json"])
    report.long_format().to_csv(paths["long"], index=False, float_format=FLOAT_FORMAT)
    logger.info("report_saved", **{k: str(v) for k, v in paths.items()})
    return paths


def save_rows(rows: List[Dict[str, Any]], path: PathLike) -> Path:
    """Generic CSV for baseline/oracle/arch tables."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path
