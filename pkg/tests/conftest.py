import numpy as np
import pytest

from reachsim.robot import load_robot_model


@pytest.fixture(scope="session")
def model():
    return load_robot_model()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_configs(model, rng, count, scale=0.8):
    """Random joint configurations comfortably inside the limits."""
    return rng.uniform(-scale, scale, (count, model.n)) * model.joint_limits
