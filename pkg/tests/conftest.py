"""Shared fixtures for the RARARL test suite."""

import os
import sys
from pathlib import Path

import numpy as np
import pytest

# 添加项目根目录到 Python 路径
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.rararl.checkpoint import Checkpoint  # noqa: E402
from src.rararl.ensemble import EnsembleQNetwork, RiskConfig  # noqa: E402
from src.rararl.nn import DenseNet  # noqa: E402
from src.rararl.speedway import NUM_ACTIONS, OBS_DIM, TrackConfig  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long learning experiments (set RARARL_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("RARARL_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set RARARL_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_net(rng):
    return DenseNet.initialize([5, 7, 6, 3], rng)


@pytest.fixture
def straight_track():
    """Single straight segment looped: curvature zero everywhere."""
    return TrackConfig(segments=((500.0, 0.0),), max_episode_steps=200)


@pytest.fixture
def circle_track():
    radius = 40.0
    return TrackConfig(segments=((2.0 * np.pi * radius, 1.0 / radius),))


NEUTRAL = RiskConfig(lambda_p=0.0, lambda_a=0.0)


def scripted_ensemble(action: int, k: int = 2, seed: int = 0) -> EnsembleQNetwork:
    """Ensemble that always prefers ``action``: zero weights, head bias 1.0 on that action."""
    net = EnsembleQNetwork.create(OBS_DIM, NUM_ACTIONS, k, np.random.default_rng(seed), trunk_hidden=(8,))
    for layer in net.networks():
        for w in layer.weights:
            w[...] = 0.0
        for b in layer.biases:
            b[...] = 0.0
    for head in net.heads:
        head.biases[-1][action] = 1.0
    return net


def scripted_checkpoint(protagonist_action: int, adversary_action=None, variant: str = "bsdqnadv") -> Checkpoint:
    prot = scripted_ensemble(protagonist_action)
    adv = scripted_ensemble(adversary_action, seed=1) if adversary_action is not None else None
    return Checkpoint(
        variant=variant,
        global_step=0,
        protagonist=prot,
        protagonist_target=prot.copy(),
        protagonist_risk=NEUTRAL,
        adversary=adv,
        adversary_target=adv.copy() if adv is not None else None,
        adversary_risk=NEUTRAL if adv is not None else None,
    )


@pytest.fixture
def make_scripted_checkpoint():
    return scripted_checkpoint
