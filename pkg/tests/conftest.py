"""Shared fixtures: small layouts, topologies, planted tasks and fast training configs."""

import numpy as np
import pytest

from app.models.domain import TauSchedule, TrainConfig
from app.utils.synth_utils import make_planted_task
from app.utils.topology_utils import CommGraph, CommTopology, NodeLayout, build_distance_matrix


# Corners in ring order: 0 and 2 are diagonal, as are 1 and 3.
UNIT_SQUARE = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def square_distances():
    return build_distance_matrix(NodeLayout(coords=np.array(UNIT_SQUARE)))


@pytest.fixture
def grid_distances():
    """2 x 4 unit grid, normalised (adjacent ~0.316, furthest pair 1.0)."""
    return build_distance_matrix(NodeLayout.grid(2, 4))


def make_topology(distances, kind: str, n_vertices: int, threshold: float) -> CommTopology:
    graph = CommGraph.star(n_vertices) if kind == "star" else CommGraph.line(n_vertices)
    return CommTopology(distances=distances, graph=graph, threshold=threshold)


@pytest.fixture(scope="session")
def split_task():
    return make_planted_task(N=8, M=3, L=8, n_samples=400, n_classes=4,
                             layout_kind="grid", informative_placement="split", snr=2.0, seed=0)


@pytest.fixture(scope="session")
def near_task():
    return make_planted_task(N=9, M=3, L=8, n_samples=400, n_classes=4,
                             layout_kind="grid", informative_placement="near", snr=2.0, seed=0)


@pytest.fixture(scope="session")
def fast_config():
    return TrainConfig(
        epochs=4,
        batch_size=64,
        hidden_width=8,
        patience=4,
        n_rounds=2,
        tau=TauSchedule(tau_start=2.0, tau_end=0.5),
    )
