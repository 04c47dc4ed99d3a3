# File storage for tasks, models, topologies and reports
from .storage import (
    TabularSchema,
    load_experiment,
    load_model,
    load_tabular,
    load_task,
    load_topology,
    save_model,
    save_report,
    save_rows,
    save_task,
)

__all__ = [
    "TabularSchema",
    "load_experiment",
    "load_model",
    "load_tabular",
    "load_task",
    "load_topology",
    "save_model",
    "save_report",
    "save_rows",
    "save_task",
]
