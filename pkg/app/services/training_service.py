"""
Training harness: selection layer and classifier trained jointly end to end.

Each mini-batch draws fresh Gumbel noise for every batch element, runs the
selection layer at the annealed temperature, classifies the selected
features and takes one Adam step on both parameter groups. Early stopping
tracks the validation loss of the hard (inferred) selection.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import pandas as pd
import structlog
from sklearn.linear_model import LogisticRegression

from ..autodiff import Adam, Tensor, backward, cross_entropy, matmul
from ..layers import (
    Classifier,
    ConditionalSelectionLayer,
    FixedSelectionLayer,
    IndependentSelectionLayer,
    SelectionLayer,
    duplicate_overlap,
    layer_from_dict,
)
from ..models.dataset import Dataset, SyntheticTask
from ..models.domain import EvaluatorKind, HardSelection, LayerKind, TopologySpec, TrainConfig
from ..models.errors import InfeasibleSelectionError, ParameterError, TrainingDivergedError
from ..utils.concrete_utils import anneal
from ..utils.topology_utils import CommTopology, build_topology, check_edges

logger = structlog.get_logger()

TaskLike = Union[Dataset, SyntheticTask]
Evaluator = Callable[[HardSelection], float]


@dataclass(eq=False)
class TrainedModel:
    """Trained parameters, the inferred selection and the per-epoch curves."""

    layer: SelectionLayer
    classifier: Classifier
    selection: HardSelection
    config: TrainConfig
    curves: List[Dict[str, float]] = field(default_factory=list)
    epochs_ran: int = 0
    best_epoch: int = 0
    test_accuracy: Optional[float] = None
    topology: Optional[TopologySpec] = None
    feasible: Optional[bool] = None

    @property
    def layer_kind(self) -> str:
        return self.layer.kind

    def curves_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.curves, columns=["epoch", "train_loss", "val_loss", "val_accuracy", "tau", "entropy"])

    def check(self, selection: Optional[HardSelection] = None, edges_only: bool = False) -> Optional[bool]:
        """Constraint verdict for `selection` (default: the inferred one) under the stored topology.

        With `edges_only`, node distinctness is not required.
        """
        if self.topology is None:
            return None
        topology = build_topology(self.topology)
        selection = selection or self.selection
        if edges_only:
            return check_edges(selection, topology.distances, topology.graph, topology.edge_thresholds())
        return topology.check(selection)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "layer": self.layer.to_dict(),
            "classifier": self.classifier.to_dict(),
            "selection": list(self.selection.assignment),
            "config": self.config.model_dump(mode="json"),
            "curves": self.curves,
            "epochs_ran": self.epochs_ran,
            "best_epoch": self.best_epoch,
            "test_accuracy": self.test_accuracy,
            "topology": self.topology.model_dump(mode="json") if self.topology else None,
            "feasible": self.feasible,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainedModel":
        return cls(
            layer=layer_from_dict(data["layer"]),
            classifier=Classifier.from_dict(data["classifier"]),
            selection=HardSelection(assignment=tuple(data["selection"])),
            config=TrainConfig.model_validate(data["config"]),
            curves=list(data.get("curves", [])),
            epochs_ran=data.get("epochs_ran", 0),
            best_epoch=data.get("best_epoch", 0),
            test_accuracy=data.get("test_accuracy"),
            topology=TopologySpec.model_validate(data["topology"]) if data.get("topology") else None,
            feasible=data.get("feasible"),
        )


def as_dataset(task: TaskLike) -> Dataset:
    return task.dataset if isinstance(task, SyntheticTask) else task


def _tau_at(config: TrainConfig, position: float) -> float:
    horizon = config.horizon()
    return anneal(config.tau, min(position, horizon), horizon)


def _infer(layer: SelectionLayer, config: TrainConfig) -> HardSelection:
    if isinstance(layer, FixedSelectionLayer):
        return layer.infer()
    return layer.infer(distinct=config.distinct_inference)


def _hard_scores(classifier: Classifier, data: Dataset, selection: HardSelection):
    features = data.X[:, list(selection.assignment), :]
    logits = classifier.forward(Tensor(features))
    loss = cross_entropy(logits, data.y).item()
    accuracy = float(np.mean(np.argmax(logits.values, axis=1) == data.y))
    return loss, accuracy


def build_layer(
    kind: LayerKind,
    dataset: Dataset,
    topology: Optional[CommTopology],
    rng: np.random.Generator,
    n_vertices: Optional[int] = None,
    selection: Optional[HardSelection] = None,
) -> SelectionLayer:
    if kind == "fixed":
        if selection is None:
            raise ParameterError("fixed-selection training needs a selection")
        return FixedSelectionLayer(selection, dataset.n_nodes)
    if kind == "conditional":
        if topology is None:
            raise ParameterError("the conditional layer needs a communication topology")
        if topology.distances.n_nodes != dataset.n_nodes:
            raise ParameterError(
                f"topology has {topology.distances.n_nodes} nodes, dataset has {dataset.n_nodes}"
            )
        return ConditionalSelectionLayer(topology.masks(), topology.net, rng=rng)
    m = n_vertices if n_vertices is not None else (topology.graph.n_vertices if topology else None)
    if m is None:
        raise ParameterError("the independent layer needs a vertex count M")
    if m > dataset.n_nodes:
        raise ParameterError(f"cannot select M={m} of N={dataset.n_nodes} nodes")
    return IndependentSelectionLayer(dataset.n_nodes, m, rng=rng)


def train(
    task: TaskLike,
    topology: Optional[CommTopology],
    layer_kind: LayerKind,
    config: TrainConfig,
    n_vertices: Optional[int] = None,
    selection: Optional[HardSelection] = None,
) -> TrainedModel:
    """
    Jointly train a selection layer and the classifier.

    Args:
        task: Dataset or SyntheticTask; split deterministically by config.seed
        topology: Communication topology (threshold included); required for
            the conditional layer, used for the feasibility verdict otherwise
        layer_kind: independent, conditional or fixed
        config: Training hyper-parameters
        n_vertices: M for the independent layer when no topology is given
        selection: The selection to train on for the fixed layer

    Returns:
        TrainedModel with the best-validation parameters restored
    """
    dataset = as_dataset(task)
    train_set, val_set, test_set = dataset.split(config.seed)
    rng = np.random.default_rng(config.seed)
    check_rng = np.random.default_rng([config.seed, 1])

    layer = build_layer(layer_kind, dataset, topology, rng, n_vertices, selection)
    classifier = Classifier(layer.n_vertices, dataset.n_features, dataset.n_classes,
                            config.hidden_width, rng=rng)
    groups = [{"params": classifier.parameters(), "lr": config.lr_classifier}]
    if layer.parameters():
        groups.insert(0, {"params": layer.parameters(), "lr": config.lr_selection})
    optimizer = Adam(groups, betas=config.betas, eps=config.eps)

    n_train = train_set.n_samples
    n_batches = max(1, int(np.ceil(n_train / config.batch_size)))
    check = (config.check_constraints and topology is not None
             and isinstance(layer, ConditionalSelectionLayer))
    edge_thresholds = topology.edge_thresholds() if check else None

    logger.info("training_started",
        layer_kind=layer.kind,
        n_nodes=dataset.n_nodes,
        n_vertices=layer.n_vertices,
        n_train=n_train,
        epochs=config.epochs,
        seed=config.seed,
    )

    curves: List[Dict[str, float]] = []
    best_loss = np.inf
    best_epoch = 0
    best_state = None
    waited = 0
    tau = _tau_at(config, 0)
    epoch = 0

    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        batch_losses = []
        for b in range(n_batches):
            if config.anneal_per == "step":
                tau = _tau_at(config, epoch + b / n_batches)
            else:
                tau = _tau_at(config, epoch)
            index = order[b * config.batch_size:(b + 1) * config.batch_size]
            Xb, yb = train_set.X[index], train_set.y[index]

            weights = None
            if isinstance(layer, FixedSelectionLayer):
                features = layer.forward(Xb)
            else:
                weights = layer.sample_weights(len(index), tau, rng, config.n_rounds)
                features = matmul(weights, Xb)
            loss = cross_entropy(classifier.forward(features), yb)
            if weights is not None and config.duplicate_penalty > 0:
                loss = loss + duplicate_overlap(weights) * config.duplicate_penalty

            value = loss.item()
            if not np.isfinite(value):
                logger.error("training_diverged", epoch=epoch, batch=b, tau=tau, loss=value)
                raise TrainingDivergedError(
                    "training loss became non-finite",
                    diagnostics={"epoch": epoch, "batch": b, "tau": tau, "loss": value},
                )
            optimizer.zero_grad()
            backward(loss)
            optimizer.step()
            batch_losses.append(value)

        if check:
            samples = layer.hard_sample_batch(check_rng, config.batch_size)
            for row in samples:
                sel = HardSelection(assignment=tuple(int(i) for i in row))
                if not check_edges(sel, topology.distances, topology.graph, edge_thresholds):
                    logger.error("constraint_violation", epoch=epoch, selection=sel.assignment)
                    raise InfeasibleSelectionError(f"sampled selection {sel.assignment} violates the constraints")

        current = _infer(layer, config)
        val_loss, val_accuracy = _hard_scores(classifier, val_set, current)
        curves.append({
            "epoch": epoch,
            "train_loss": float(np.mean(batch_losses)),
            "val_loss": val_loss,
            "val_accuracy": val_accuracy,
            "tau": tau,
            "entropy": layer.entropy(),
        })
        logger.debug("training_epoch_completed", **curves[-1])

        if val_loss < best_loss:
            best_loss, best_epoch, waited = val_loss, epoch, 0
            best_state = ([p.values.copy() for p in layer.parameters()], classifier.snapshot())
        else:
            waited += 1
            if waited >= config.patience:
                logger.info("training_early_stopped", epoch=epoch, best_epoch=best_epoch)
                break

    if best_state is not None:
        for param, values in zip(layer.parameters(), best_state[0]):
            param.values = values
        classifier.restore(best_state[1])

    final = _infer(layer, config)
    _, test_accuracy = _hard_scores(classifier, test_set, final)
    model = TrainedModel(
        layer=layer,
        classifier=classifier,
        selection=final,
        config=config,
        curves=curves,
        epochs_ran=epoch + 1,
        best_epoch=best_epoch,
        test_accuracy=test_accuracy,
        topology=topology.to_spec() if topology is not None else None,
        feasible=topology.check(final) if topology is not None else None,
    )
    logger.info("training_completed",
        layer_kind=layer.kind,
        selection=final.assignment,
        epochs_ran=model.epochs_ran,
        best_epoch=best_epoch,
        test_accuracy=test_accuracy,
        feasible=model.feasible,
    )
    return model


class ClassifierEvaluator:
    """Retrain the classifier on a fixed selection; the score is its test accuracy."""

    def __init__(self, task: TaskLike, config: TrainConfig):
        self.dataset = as_dataset(task)
        self.config = config

    def __call__(self, selection: HardSelection) -> float:
        model = train(self.dataset, None, "fixed", self.config, selection=selection)
        return model.test_accuracy


class LinearProbeEvaluator:
    """Multinomial logistic regression on the selected features; cheap oracle mode."""

    def __init__(self, task: TaskLike, seed: int = 0):
        self.dataset = as_dataset(task)
        self.seed = seed
        train_set, val_set, self.test_set = self.dataset.split(seed)
        self.fit_set = Dataset(
            X=np.concatenate([train_set.X, val_set.X]),
            y=np.concatenate([train_set.y, val_set.y]),
            n_classes=self.dataset.n_classes,
        )

    def __call__(self, selection: HardSelection) -> float:
        nodes = list(selection.assignment)
        X_fit = self.fit_set.X[:, nodes, :].reshape(self.fit_set.n_samples, -1)
        X_test = self.test_set.X[:, nodes, :].reshape(self.test_set.n_samples, -1)
        probe = LogisticRegression(max_iter=1000)
        probe.fit(X_fit, self.fit_set.y)
        return float(probe.score(X_test, self.test_set.y))


def make_evaluator(kind: EvaluatorKind, task: TaskLike, config: TrainConfig) -> Evaluator:
    if kind == "linear-probe":
        return LinearProbeEvaluator(task, seed=config.seed)
    return ClassifierEvaluator(task, config)
