# Models module: pydantic configs, datasets and error types
from .dataset import Dataset, SyntheticTask
from .domain import (
    ExperimentConfig,
    HardSelection,
    OperationResult,
    SweepRow,
    TaskSpec,
    TauSchedule,
    TopologySpec,
    TrainConfig,
)
from .errors import SelectionError

__all__ = [
    "Dataset",
    "ExperimentConfig",
    "HardSelection",
    "OperationResult",
    "SelectionError",
    "SweepRow",
    "SyntheticTask",
    "TaskSpec",
    "TauSchedule",
    "TopologySpec",
    "TrainConfig",
]
