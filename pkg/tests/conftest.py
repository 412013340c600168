"""Shared fixtures: one clean rendered scene and the default config.

The clean scene (no noise, no jitter) is expensive enough to render once
per session; tests that need noise render their own specs.
"""

import numpy as np
import pytest

from nfcalib.config import PipelineConfig
from nfcalib.synthetic import SceneSpec, generate_scene


@pytest.fixture(scope="session")
def clean_scene():
    return generate_scene(SceneSpec(seed=0))


@pytest.fixture(scope="session")
def noisy_scene():
    return generate_scene(SceneSpec(seed=42, target_distance=0.33,
                                    depth_noise=0.002, radar_jitter=0.002))


@pytest.fixture()
def config():
    return PipelineConfig()


@pytest.fixture()
def rng():
    # function-scoped so every test sees the same deterministic stream
    return np.random.default_rng(12345)
