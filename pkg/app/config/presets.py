"""Named planted-task presets for `generate --preset` and experiment files."""

from typing import Dict, List

from ..models.domain import TaskSpec

PRESETS: Dict[str, TaskSpec] = {
    # 3 x 3 grid, informative block around the centre node
    "near-grid-3x3": TaskSpec(n_nodes=9, n_informative=3, placement="near"),
    # 2 x 4 grid, informative nodes at opposite ends
    "split-grid-2x4": TaskSpec(n_nodes=8, n_informative=3, placement="split"),
    "split-grid-8x8": TaskSpec(n_nodes=64, n_informative=4, placement="split", n_samples=800),
    "far-ring-8": TaskSpec(n_nodes=8, n_informative=3, layout_kind="ring", placement="far"),
}


def preset_names() -> List[str]:
    return sorted(PRESETS)


def get_preset(name: str, seed: int = 0) -> TaskSpec:
    """Copy of the named preset with `seed` applied; KeyError for unknown names."""
    return PRESETS[name].model_copy(update={"seed": seed})
