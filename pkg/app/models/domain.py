"""Pydantic models shared by the library, the services and the CLI."""

from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


LayerKind = Literal["independent", "conditional", "fixed"]
MethodName = Literal["conditional", "greedy-mi", "oracle", "vanilla"]
EvaluatorKind = Literal["classifier", "linear-probe"]


class HardSelection(BaseModel):
    """M discrete node indices, one per communication-graph vertex id."""
    model_config = ConfigDict(frozen=True)

    assignment: Tuple[int, ...] = Field(..., description="Node index per vertex id")

    @field_validator("assignment")
    @classmethod
    def validate_assignment(cls, v):
        if any(idx < 0 for idx in v):
            raise ValueError("node indices must be non-negative")
        return v

    @property
    def n_vertices(self) -> int:
        return len(self.assignment)

    def is_distinct(self) -> bool:
        return len(set(self.assignment)) == len(self.assignment)

    def __getitem__(self, vertex: int) -> int:
        return self.assignment[vertex]


class TauSchedule(BaseModel):
    """Exponential temperature schedule tau_start -> tau_end over `horizon` epochs."""
    model_config = ConfigDict(extra="forbid")

    tau_start: float = Field(default=10.0, gt=0)
    tau_end: float = Field(default=0.1, gt=0)
    horizon: Optional[int] = Field(default=None, ge=0, description="Defaults to the epoch count")

    @model_validator(mode="after")
    def validate_order(self):
        if self.tau_start < self.tau_end:
            raise ValueError("tau_start must be >= tau_end")
        return self


class TrainConfig(BaseModel):
    """Hyper-parameters for one training run."""
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(default=300, ge=1)
    batch_size: int = Field(default=32, ge=1)
    lr_selection: float = Field(default=1e-2, gt=0)
    lr_classifier: float = Field(default=1e-3, gt=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(default=1e-8, gt=0)
    tau: TauSchedule = Field(default_factory=TauSchedule)
    anneal_per: Literal["epoch", "step"] = "epoch"
    n_rounds: int = Field(default=5, ge=1, description="Concrete samples averaged per training sample")
    seed: int = 0
    patience: int = Field(default=50, ge=1, description="Early-stopping patience in epochs")
    hidden_width: int = Field(default=32, ge=1)
    duplicate_penalty: float = Field(default=0.0, ge=0)
    distinct_inference: bool = False
    check_constraints: bool = True

    @field_validator("betas")
    @classmethod
    def validate_betas(cls, v):
        if not all(0.0 <= b < 1.0 for b in v):
            raise ValueError("betas must lie in [0, 1)")
        return v

    def horizon(self) -> int:
        return self.tau.horizon if self.tau.horizon is not None else self.epochs


class TopologySpec(BaseModel):
    """Topology file contents: node geometry, communication graph and threshold."""
    model_config = ConfigDict(extra="forbid")

    coords: Optional[List[List[float]]] = Field(None, description="N x d node coordinates")
    distance_matrix: Optional[List[List[float]]] = Field(
        None, description="Explicit N x N distance (or communication cost) matrix"
    )
    n_vertices: int = Field(..., ge=1, description="Communication-graph vertex count M")
    kind: Literal["star", "line", "tree"] = "star"
    parents: Optional[List[Optional[int]]] = Field(
        None, description="Transmission target per vertex, null for the root (tree kind)"
    )
    root: int = Field(default=0, ge=0)
    threshold: float = Field(default=1.0, ge=0)
    per_edge_thresholds: Optional[Dict[int, float]] = None
    threshold_mode: Literal["uniform", "relay-load"] = "uniform"
    normalize: bool = True

    @field_validator("parents")
    @classmethod
    def validate_parents(cls, v):
        # TOML has no null: any negative parent marks the root
        if v is None:
            return v
        return [None if p is None or p < 0 else p for p in v]

    @model_validator(mode="after")
    def validate_geometry(self):
        if self.coords is not None and self.distance_matrix is not None:
            raise ValueError("give either coords or distance_matrix, not both")
        if self.kind == "tree":
            if self.parents is None or len(self.parents) != self.n_vertices:
                raise ValueError("tree topologies need one parent entry per vertex")
        if self.root >= self.n_vertices:
            raise ValueError("root must be a vertex id")
        return self


class TaskSpec(BaseModel):
    """Generator parameters for a planted synthetic task."""
    model_config = ConfigDict(extra="forbid")

    n_nodes: int = Field(default=8, ge=1)
    n_informative: int = Field(default=3, ge=1)
    n_features: int = Field(default=8, ge=1)
    n_samples: int = Field(default=400, ge=10)
    n_classes: int = Field(default=4, ge=2)
    layout_kind: Literal["grid", "ring"] = "grid"
    placement: Literal["near", "far", "split"] = "near"
    snr: float = Field(default=2.0, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def validate_sizes(self):
        if self.n_informative > self.n_nodes:
            raise ValueError("n_informative must not exceed n_nodes")
        return self


class ExperimentConfig(BaseModel):
    """A full experiment: where the data comes from, which methods, which thresholds."""
    model_config = ConfigDict(extra="forbid")

    task_path: Optional[str] = None
    task: Optional[TaskSpec] = None
    preset: Optional[str] = None
    topology_path: Optional[str] = None
    topology: Optional[TopologySpec] = None
    output_dir: str = "runs"
    methods: List[MethodName] = Field(default_factory=lambda: ["conditional", "greedy-mi", "oracle", "vanilla"])
    thresholds: List[float] = Field(default_factory=lambda: [0.3, 0.5, 0.75, 1.0])
    train: TrainConfig = Field(default_factory=TrainConfig)
    seeds: List[int] = Field(default_factory=lambda: list(range(10)))
    evaluator: EvaluatorKind = "classifier"
    mi_bins: int = Field(default=8, ge=2)
    jobs: int = Field(default=1, ge=1)
    record_timing: bool = False

    @field_validator("thresholds")
    @classmethod
    def validate_thresholds(cls, v):
        if any(t < 0 for t in v):
            raise ValueError("thresholds must be non-negative")
        if list(v) != sorted(v):
            raise ValueError("thresholds must be sorted ascending")
        return v

    @model_validator(mode="after")
    def validate_sources(self):
        sources = [s for s in (self.task_path, self.task, self.preset) if s is not None]
        if len(sources) > 1:
            raise ValueError("give at most one of task_path, task, preset")
        if self.topology_path is not None and self.topology is not None:
            raise ValueError("give either topology_path or topology, not both")
        return self


class SweepRow(BaseModel):
    """One (T, method, seed) cell of a threshold sweep; `threshold` is written as column T."""

    threshold: float = Field(..., serialization_alias="T")
    method: MethodName
    seed: int
    status: Literal["ok", "infeasible", "failed"] = "ok"
    test_accuracy: Optional[float] = None
    selection: Optional[List[int]] = None
    epochs_ran: Optional[int] = None
    wall_time: Optional[float] = None
    error: Optional[str] = None


class OperationResult(BaseModel):
    """Generic result wrapper for operations whose failure is an expected outcome."""
    success: bool
    data: Optional[dict] = None
    error: Optional[str] = None
