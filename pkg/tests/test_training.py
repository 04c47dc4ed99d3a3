"""
Tests for the joint training harness and the selection evaluators.

Fast tests run a handful of epochs on small planted tasks; tests marked
`slow` train to convergence and check that the planted nodes are recovered.
"""

import numpy as np
import pytest

from app.models.dataset import Dataset
from app.models.domain import HardSelection, TauSchedule, TrainConfig
from app.models.errors import InfeasibleConstraintsError, ParameterError, TrainingDivergedError
from app.services.training_service import (
    ClassifierEvaluator,
    LinearProbeEvaluator,
    TrainedModel,
    make_evaluator,
    train,
)
from app.utils.topology_utils import CommGraph, CommTopology, NodeLayout, build_distance_matrix, check_edges


def task_topology(task, kind: str, n_vertices: int, threshold: float) -> CommTopology:
    D = build_distance_matrix(NodeLayout(coords=task.coords))
    graph = CommGraph.star(n_vertices) if kind == "star" else CommGraph.line(n_vertices)
    return CommTopology(D, graph, threshold)


class TestTrainSmoke:

    def test_independent_layer(self, near_task, fast_config):
        model = train(near_task, None, "independent", fast_config, n_vertices=3)
        assert model.layer_kind == "independent"
        assert model.selection.n_vertices == 3
        assert model.epochs_ran == len(model.curves)
        assert 0.0 <= model.test_accuracy <= 1.0
        assert model.topology is None and model.feasible is None

    def test_conditional_layer_stays_feasible(self, split_task, fast_config):
        topology = task_topology(split_task, "line", 3, 0.5)
        model = train(split_task, topology, "conditional", fast_config)
        assert check_edges(model.selection, topology.distances, topology.graph, 0.5)
        assert model.feasible == topology.check(model.selection)
        assert model.check() == model.feasible

    def test_curves_frame(self, near_task, fast_config):
        model = train(near_task, None, "independent", fast_config, n_vertices=2)
        frame = model.curves_frame()
        assert list(frame.columns) == ["epoch", "train_loss", "val_loss", "val_accuracy", "tau", "entropy"]
        assert frame["tau"].is_monotonic_decreasing
        assert frame["tau"].iloc[0] == fast_config.tau.tau_start

    def test_step_annealing(self, near_task, fast_config):
        config = fast_config.model_copy(update={"anneal_per": "step"})
        model = train(near_task, None, "independent", config, n_vertices=2)
        assert model.curves[-1]["tau"] < fast_config.tau.tau_start

    def test_duplicate_penalty(self, near_task, fast_config):
        config = fast_config.model_copy(update={"duplicate_penalty": 1.0})
        model = train(near_task, None, "independent", config, n_vertices=3)
        assert np.isfinite(model.curves[-1]["train_loss"])

    def test_fixed_selection_has_no_selection_parameters(self, near_task, fast_config):
        selection = HardSelection(assignment=near_task.planted)
        model = train(near_task, None, "fixed", fast_config, selection=selection)
        assert model.layer.parameters() == []
        assert model.selection == selection

    def test_same_seed_same_result(self, split_task, fast_config):
        topology = task_topology(split_task, "star", 3, 0.75)
        first = train(split_task, topology, "conditional", fast_config)
        second = train(split_task, topology, "conditional", fast_config)
        assert first.selection == second.selection
        assert first.curves == second.curves

    def test_best_epoch_within_run(self, near_task, fast_config):
        config = fast_config.model_copy(update={"epochs": 6, "patience": 2})
        model = train(near_task, None, "independent", config, n_vertices=2)
        assert 0 <= model.best_epoch < model.epochs_ran <= 6


class TestTrainErrors:

    def test_non_finite_loss_reports_diagnostics(self, near_task, fast_config):
        X = near_task.dataset.X.copy()
        X[:, 0, 0] = np.nan
        broken = Dataset(X=X, y=near_task.dataset.y, n_classes=near_task.dataset.n_classes)
        with pytest.raises(TrainingDivergedError) as exc:
            train(broken, None, "independent", fast_config, n_vertices=2)
        assert exc.value.diagnostics["epoch"] == 0
        assert "tau" in exc.value.diagnostics

    def test_conditional_needs_topology(self, near_task, fast_config):
        with pytest.raises(ParameterError):
            train(near_task, None, "conditional", fast_config)

    def test_infeasible_threshold(self, split_task, fast_config):
        topology = task_topology(split_task, "line", 3, 0.1)
        with pytest.raises(InfeasibleConstraintsError):
            train(split_task, topology, "conditional", fast_config)

    def test_topology_size_must_match(self, near_task, split_task, fast_config):
        topology = task_topology(split_task, "star", 3, 1.0)
        with pytest.raises(ParameterError):
            train(near_task, topology, "conditional", fast_config)

    def test_more_vertices_than_nodes(self, near_task, fast_config):
        with pytest.raises(ParameterError):
            train(near_task, None, "independent", fast_config, n_vertices=10)

    def test_fixed_needs_selection(self, near_task, fast_config):
        with pytest.raises(ParameterError):
            train(near_task, None, "fixed", fast_config)


class TestSerialisation:

    def test_round_trip_keeps_selection_and_verdict(self, split_task, fast_config):
        topology = task_topology(split_task, "line", 3, 0.5)
        model = train(split_task, topology, "conditional", fast_config)
        restored = TrainedModel.from_dict(model.to_dict())
        assert restored.selection == model.selection
        assert restored.check() == model.check()
        assert restored.layer.infer() == model.layer.infer()
        assert restored.config == model.config


class TestEvaluators:

    def test_linear_probe_prefers_planted_nodes(self, near_task):
        evaluate = LinearProbeEvaluator(near_task, seed=0)
        noise_nodes = tuple(n for n in range(9) if n not in near_task.planted)[:3]
        planted = evaluate(HardSelection(assignment=near_task.planted))
        noise = evaluate(HardSelection(assignment=noise_nodes))
        assert planted > 0.9
        assert noise < 0.5

    def test_classifier_evaluator_is_an_accuracy(self, near_task, fast_config):
        score = ClassifierEvaluator(near_task, fast_config)(HardSelection(assignment=near_task.planted))
        assert 0.0 <= score <= 1.0

    def test_factory(self, near_task, fast_config):
        assert isinstance(make_evaluator("linear-probe", near_task, fast_config), LinearProbeEvaluator)
        assert isinstance(make_evaluator("classifier", near_task, fast_config), ClassifierEvaluator)


@pytest.mark.slow
class TestPlantedRecovery:
    config = TrainConfig(epochs=150, patience=150, tau=TauSchedule(tau_start=10.0, tau_end=0.1))
    # every near-placement node carries the full label, so repeats cost no accuracy
    recovery_config = config.model_copy(update={"duplicate_penalty": 1.0, "distinct_inference": True})

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_independent_recovers_planted_set(self, near_task, seed):
        config = self.recovery_config.model_copy(update={"seed": seed})
        model = train(near_task, None, "independent", config, n_vertices=3)
        assert model.selection.is_distinct()
        assert set(model.selection.assignment) == set(near_task.planted)

    def test_selection_entropy_falls_during_annealing(self, split_task):
        topology = task_topology(split_task, "line", 3, 0.75)
        falling = 0
        for seed in range(10):
            config = TrainConfig(epochs=50, patience=50, seed=seed, tau=TauSchedule(tau_start=10.0, tau_end=0.1))
            entropy = train(split_task, topology, "conditional", config).curves_frame()["entropy"].to_numpy()
            blocks = entropy.reshape(5, 10).mean(axis=1)
            falling += bool(np.all(np.diff(blocks) <= 1e-9) and blocks[-1] < blocks[0])
        assert falling >= 8

    def test_conditional_with_vacuous_threshold_matches_vanilla(self, near_task):
        topology = task_topology(near_task, "star", 3, 1.0)
        conditional = train(near_task, topology, "conditional", self.config)
        vanilla = train(near_task, None, "independent", self.config, n_vertices=3)
        assert conditional.test_accuracy >= vanilla.test_accuracy - 0.1

    def test_conditional_beats_greedy_on_split_task(self, split_task):
        from app.services.baseline_service import greedy_constrained_select, mi_rank, selection_from_result
        topology = task_topology(split_task, "line", 3, 0.75)
        evaluate = LinearProbeEvaluator(split_task, seed=0)
        model = train(split_task, topology, "conditional", self.config)
        ranking = mi_rank(split_task.dataset.split(0)[0])
        result = greedy_constrained_select(ranking, topology.distances, topology.graph, 0.75)
        greedy = selection_from_result(result)
        assert evaluate(model.selection) >= evaluate(greedy) - 0.05
