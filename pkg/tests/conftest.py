import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

import encodebench as eb


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_blocks():
    """24 blocks of 4 samples."""
    return np.repeat(np.arange(24), 4)


@pytest.fixture
def small_plan(small_blocks):
    return eb.plan_grouped(small_blocks, n_outer=6, n_inner=5)


@pytest.fixture
def tiny_recording(rng, small_blocks):
    """Low-noise dataset driven by a 4-dim feature space; 20 units."""
    features = eb.FeatureSpace("SIG", rng.standard_normal((96, 4)), "sig")
    weights = rng.standard_normal((4, 20))
    responses = features.data @ weights + 0.3 * rng.standard_normal((96, 20))
    participants = np.arange(20) % 4
    return features, responses, participants
