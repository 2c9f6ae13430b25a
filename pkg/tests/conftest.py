import os

import hypothesis
import numpy as np
import pytest
import torch

from lastlab.config.run_config import RunConfig, apply_overrides
from lastlab.tokenizer.codec import Trajectory
from lastlab.utils.logging_config import error_tracker
from lastlab.world.scene import DrivableCorridor, EgoState, SceneRecord

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "ci"))

RUN_SLOW = os.getenv("LASTLAB_RUN_SLOW", "0") == "1"

# Small but structurally complete model/world for unit tests
TINY = (
    "policy.d_model=32",
    "policy.n_layers=2",
    "policy.n_heads=4",
    "adapters.n_heads=4",
    "policy.patch_size=16",
    "policy.max_answer_tokens=48",
    "policy.max_len=192",
    "latent.n_3d=4",
    "latent.n_wm=2",
    "world.feature_dim=8",
    "sft.batch_size=4",
    "grpo.group_size=4",
    "grpo.scenes_per_iteration=2",
    "grpo.iterations=2",
    "data.n_easy=4",
    "data.n_hard=4",
    "data.n_eval=2",
)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long smoke runs, enabled with LASTLAB_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip = pytest.mark.skip(reason="set LASTLAB_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def tiny_config(*overrides: str) -> RunConfig:
    return apply_overrides(RunConfig(), list(TINY) + list(overrides))


@pytest.fixture
def config() -> RunConfig:
    return tiny_config()


@pytest.fixture(autouse=True)
def _reset_state():
    torch.manual_seed(0)
    error_tracker.reset()
    yield


@pytest.fixture
def run_root(tmp_path, monkeypatch):
    monkeypatch.setenv("LASTLAB_RUN_ROOT", str(tmp_path / "runs"))
    return tmp_path / "runs"


def static_scene(agents=(), half_width=3.0, velocity=5.0, stop_line_s=None) -> SceneRecord:
    """Straight corridor along +y through the origin, GT at constant speed."""
    centerline = np.column_stack([np.zeros(81), np.linspace(-20.0, 140.0, 81)])
    gt = Trajectory(np.column_stack([np.zeros(6), velocity * 0.5 * np.arange(1, 7)]))
    history = np.column_stack([np.zeros(4), -velocity * 0.5 * np.arange(4, 0, -1), np.full(4, np.pi / 2)])
    return SceneRecord(
        scene_id=0,
        difficulty="easy",
        corridor=DrivableCorridor(centerline, half_width, stop_line_s=stop_line_s),
        agents=list(agents),
        ego_state=EgoState(velocity=velocity, acceleration=0.0),
        history=history,
        instruction="stop" if stop_line_s is not None else "straight",
        gt_trajectory=gt,
        seed=0,
    )
