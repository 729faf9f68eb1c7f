import numpy as np
import pytest

from dynamics.envsim.datasets import EnvConfig, generate_dataset
from fixtures.utils import create_scoped_fixtures

TINY_EPISODES = 6
TINY_STEPS = 90


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_pendulum_dataset():
    """Six short pendulum episodes: two 61-sample windows each."""
    return generate_dataset(EnvConfig(kind="pendulum", count=TINY_EPISODES, steps=TINY_STEPS, seed=7))


def tiny_spiral_dataset():
    return generate_dataset(EnvConfig(kind="spiral", count=TINY_EPISODES, steps=TINY_STEPS, seed=7))


# defines:
# FUN_tiny_pendulum_dataset
# CLA_tiny_pendulum_dataset
# MOD_tiny_pendulum_dataset
# SES_tiny_pendulum_dataset
create_scoped_fixtures(globals(), tiny_pendulum_dataset)

# defines:
# FUN_tiny_spiral_dataset
# CLA_tiny_spiral_dataset
# MOD_tiny_spiral_dataset
# SES_tiny_spiral_dataset
create_scoped_fixtures(globals(), tiny_spiral_dataset)
