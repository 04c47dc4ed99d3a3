"""
Tests for planted task generation and file storage.

Covers:
- generator determinism, balance, placement and the self-check
- CSV/JSON round trips for tasks and trained models
- ingestion errors with data-row numbers
"""

import json

import numpy as np
import pandas as pd
import pytest

from app.config.presets import get_preset, preset_names
from app.db.storage import (
    TabularSchema,
    dataset_frame,
    load_experiment,
    load_model,
    load_tabular,
    load_task,
    load_topology,
    read_config_file,
    save_model,
    save_task,
)
from app.models.errors import IngestionError, ParameterError
from app.models.domain import HardSelection
from app.services.training_service import LinearProbeEvaluator, train
from app.utils.synth_utils import grid_shape, make_planted_task, place_informative, task_from_spec
from app.utils.topology_utils import NodeLayout, build_distance_matrix


class TestPlantedTask:

    def test_same_seed_same_data(self):
        first = make_planted_task(seed=3)
        second = make_planted_task(seed=3)
        np.testing.assert_array_equal(first.dataset.X, second.dataset.X)
        np.testing.assert_array_equal(first.dataset.y, second.dataset.y)

    def test_different_seed_different_data(self):
        assert not np.array_equal(make_planted_task(seed=0).dataset.X, make_planted_task(seed=1).dataset.X)

    @pytest.mark.parametrize("n_samples,n_classes", [(400, 4), (401, 4), (103, 3), (50, 2)])
    def test_classes_balanced(self, n_samples, n_classes):
        task = make_planted_task(n_samples=n_samples, n_classes=n_classes, snr=0.0)
        counts = np.bincount(task.dataset.y, minlength=n_classes)
        assert counts.max() - counts.min() <= 1

    def test_near_placement_on_three_by_three(self, near_task):
        assert near_task.planted == (1, 3, 4)
        assert near_task.self_check_accuracy >= 0.95

    def test_split_placement_uses_opposite_ends(self, split_task):
        assert split_task.metadata["sides"] == [[0, 1], [7]]
        assert split_task.planted == (0, 1, 7)

    def test_far_placement_spreads_out(self):
        D = build_distance_matrix(NodeLayout.ring(8)).values
        side_a, side_b = place_informative(D, 3, "far")
        assert side_b == []
        assert min(D[i, j] for i in side_a for j in side_a if i != j) > 0.5

    def test_split_overlap_is_rejected(self):
        # on a 2 x 2 grid both halves claim node 1
        with pytest.raises(ParameterError, match="overlaps"):
            make_planted_task(N=4, M=4, informative_placement="split")

    def test_too_many_informative_nodes(self):
        with pytest.raises(ParameterError):
            make_planted_task(N=4, M=5)

    def test_unknown_placement(self):
        with pytest.raises(ParameterError):
            make_planted_task(informative_placement="diagonal")

    def test_weak_signal_fails_self_check(self):
        with pytest.raises(ParameterError, match="too weak"):
            make_planted_task(snr=0.01)

    def test_zero_snr_is_chance(self):
        task = make_planted_task(snr=0.0, n_samples=800)
        assert task.self_check_accuracy is None
        score = LinearProbeEvaluator(task)(HardSelection(assignment=task.planted))
        assert score < 0.4

    def test_grid_shapes(self):
        assert grid_shape(8) == (2, 4)
        assert grid_shape(9) == (3, 3)
        assert grid_shape(64) == (8, 8)
        assert grid_shape(7) == (1, 7)

    def test_split_preset(self):
        spec = get_preset("split-grid-2x4", seed=0)
        task = task_from_spec(spec)
        assert task.dataset.X.shape == (400, 8, 8)
        assert set(preset_names()) >= {"near-grid-3x3", "split-grid-2x4", "split-grid-8x8", "far-ring-8"}

    def test_dataset_split_sizes(self, near_task):
        train_set, val_set, test_set = near_task.dataset.split(0)
        assert (train_set.n_samples, val_set.n_samples, test_set.n_samples) == (256, 64, 80)


class TestTaskFiles:

    def test_round_trip_is_exact(self, split_task, tmp_path):
        save_task(split_task, tmp_path / "task")
        loaded = load_task(tmp_path / "task.csv")
        np.testing.assert_array_equal(loaded.dataset.X, split_task.dataset.X)
        np.testing.assert_array_equal(loaded.dataset.y, split_task.dataset.y)
        np.testing.assert_array_equal(loaded.coords, split_task.coords)
        assert loaded.informative_sets == split_task.informative_sets
        assert loaded.metadata["placement"] == "split"

    def test_writes_are_deterministic(self, near_task, tmp_path):
        first = save_task(near_task, tmp_path / "a" / "task")
        second = save_task(near_task, tmp_path / "b" / "task")
        assert first["csv"].read_bytes() == second["csv"].read_bytes()
        assert first["metadata"].read_bytes() == second["metadata"].read_bytes()

    def test_missing_metadata(self, near_task, tmp_path):
        paths = save_task(near_task, tmp_path / "task")
        paths["metadata"].unlink()
        with pytest.raises(IngestionError):
            load_task(paths["csv"])


class TestLoadTabular:
    schema = TabularSchema(n_nodes=2, n_features=2, n_classes=3)

    def write(self, tmp_path, text: str):
        path = tmp_path / "data.csv"
        path.write_text(text)
        return path

    def test_declared_shape(self, tmp_path):
        path = self.write(tmp_path, "n0_f0,n0_f1,n1_f0,n1_f1,label\n1,2,3,4,0\n5,6,7,8,2\n")
        dataset = load_tabular(path, self.schema)
        assert dataset.X.shape == (2, 2, 2)
        np.testing.assert_array_equal(dataset.X[1, 1], [7.0, 8.0])
        np.testing.assert_array_equal(dataset.y, [0, 2])

    def test_seventeen_digit_values_parse_exactly(self, tmp_path):
        values = np.random.default_rng(7).normal(size=(50, 4))
        rows = "".join(",".join("%.17g" % v for v in row) + ",1\n" for row in values)
        path = self.write(tmp_path, "n0_f0,n0_f1,n1_f0,n1_f1,label\n" + rows)
        dataset = load_tabular(path, self.schema)
        np.testing.assert_array_equal(dataset.X.reshape(50, 4), values)

    def test_empty_file(self, tmp_path):
        with pytest.raises(IngestionError, match="empty"):
            load_tabular(self.write(tmp_path, ""), self.schema)

    def test_header_only(self, tmp_path):
        with pytest.raises(IngestionError):
            load_tabular(self.write(tmp_path, "n0_f0,n0_f1,n1_f0,n1_f1,label\n"), self.schema)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError, match="not found"):
            load_tabular(tmp_path / "absent.csv", self.schema)

    def test_missing_column(self, tmp_path):
        path = self.write(tmp_path, "n0_f0,n0_f1,n1_f0,label\n1,2,3,0\n")
        with pytest.raises(IngestionError, match="n1_f1"):
            load_tabular(path, self.schema)

    def test_non_numeric_cell_reports_row(self, tmp_path):
        path = self.write(tmp_path, "n0_f0,n0_f1,n1_f0,n1_f1,label\n1,2,3,4,0\n1,2,3,4,1\n1,abc,3,4,1\n")
        with pytest.raises(IngestionError) as exc:
            load_tabular(path, self.schema)
        assert exc.value.row == 3
        assert "n0_f1" in str(exc.value)

    def test_empty_cell_reports_row(self, tmp_path):
        path = self.write(tmp_path, "n0_f0,n0_f1,n1_f0,n1_f1,label\n1,2,,4,0\n")
        with pytest.raises(IngestionError) as exc:
            load_tabular(path, self.schema)
        assert exc.value.row == 1

    def test_label_out_of_range(self, tmp_path):
        path = self.write(tmp_path, "n0_f0,n0_f1,n1_f0,n1_f1,label\n1,2,3,4,0\n1,2,3,4,3\n")
        with pytest.raises(IngestionError) as exc:
            load_tabular(path, self.schema)
        assert exc.value.row == 2

    def test_fractional_label(self, tmp_path):
        path = self.write(tmp_path, "n0_f0,n0_f1,n1_f0,n1_f1,label\n1,2,3,4,0.5\n")
        with pytest.raises(IngestionError):
            load_tabular(path, self.schema)

    def test_custom_columns(self, tmp_path):
        schema = TabularSchema(n_nodes=1, n_features=2, n_classes=2, label_column="y",
                               feature_columns=["a", "b"])
        path = self.write(tmp_path, "b,a,y\n2,1,1\n")
        dataset = load_tabular(path, schema)
        np.testing.assert_array_equal(dataset.X[0, 0], [1.0, 2.0])

    def test_schema_column_count(self):
        with pytest.raises(ValueError):
            TabularSchema(n_nodes=2, n_features=2, n_classes=2, feature_columns=["a"])

    def test_frame_columns_are_node_major(self, near_task):
        columns = list(dataset_frame(near_task.dataset).columns)
        assert columns[:3] == ["n0_f0", "n0_f1", "n0_f2"]
        assert columns[-1] == "label"


class TestModelFiles:

    def test_round_trip(self, near_task, fast_config, tmp_path):
        model = train(near_task, None, "independent", fast_config, n_vertices=2)
        path = save_model(model, tmp_path / "model.json")
        restored = load_model(path)
        assert restored.selection == model.selection
        np.testing.assert_array_equal(restored.layer.logits.values, model.layer.logits.values)
        curves = pd.read_csv(tmp_path / "model_curves.csv")
        assert len(curves) == model.epochs_ran

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("{not json")
        with pytest.raises(IngestionError):
            load_model(path)

    def test_incomplete_file(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"layer": {"kind": "independent"}}))
        with pytest.raises(IngestionError):
            load_model(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_model(tmp_path / "absent.json")


class TestConfigFiles:

    def test_toml_experiment(self, tmp_path):
        path = tmp_path / "experiment.toml"
        path.write_text(
            'preset = "split-grid-2x4"\n'
            "thresholds = [0.35, 0.5, 1.0]\n"
            'methods = ["greedy-mi", "oracle"]\n'
            "[topology]\n"
            'kind = "line"\n'
            "n_vertices = 3\n"
            "[train]\n"
            "epochs = 20\n"
        )
        experiment = load_experiment(path)
        assert experiment.preset == "split-grid-2x4"
        assert experiment.topology.kind == "line"
        assert experiment.train.epochs == 20

    def test_toml_tree_topology(self, tmp_path):
        path = tmp_path / "topology.toml"
        path.write_text(
            'kind = "tree"\n'
            "n_vertices = 4\n"
            "parents = [-1, 0, 0, 1]\n"
            "threshold = 0.5\n"
            "[per_edge_thresholds]\n"
            "3 = 0.3\n"
        )
        spec = load_topology(path)
        assert spec.parents == [None, 0, 0, 1]
        assert spec.per_edge_thresholds == {3: 0.3}

    def test_json_config(self, tmp_path):
        path = tmp_path / "topology.json"
        path.write_text(json.dumps({"n_vertices": 2, "threshold": 0.5}))
        assert read_config_file(path) == {"n_vertices": 2, "threshold": 0.5}

    def test_unsupported_extension(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("a: 1\n")
        with pytest.raises(IngestionError):
            read_config_file(path)

    def test_unsorted_thresholds_rejected(self, tmp_path):
        path = tmp_path / "experiment.json"
        path.write_text(json.dumps({"thresholds": [1.0, 0.5]}))
        with pytest.raises(ValueError):
            load_experiment(path)
