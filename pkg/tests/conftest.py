import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mazegaze.fovea import FoveaParams  # noqa: E402
from mazegaze.gazernn import ModelConfig  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(side=7, sigma=0.0, n_steps=2, **kw) -> ModelConfig:
    """A model small enough for exhaustive finite differences."""
    return ModelConfig(
        memory_channels=2,
        memory_hidden=(3, 3),
        saccade_channels=(2, 2, 2),
        mlp_hidden=4,
        n_steps=n_steps,
        fovea=FoveaParams(tau=2.0, noise_sigma=sigma, image_side=side),
        **kw,
    )
