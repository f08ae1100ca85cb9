import numpy as np
import pytest

from ocql.agent import PolicyBundle
from ocql.envs.process import GaussianThresholdEnv
from ocql.nnet import MlpNetwork


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the scaled pipelines")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: scaled end-to-end pipeline, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


class FunctionApproximator:
    """Fixed approximator ``predict(inputs) = fn(inputs)``, used to rig the networks."""

    def __init__(self, fn):
        self.fn = fn

    def predict(self, inputs):
        return np.asarray(self.fn(np.asarray(inputs, dtype=float)), dtype=float)


def linear_network(coefficients, bias=0.0) -> MlpNetwork:
    return MlpNetwork(weights=[np.asarray(coefficients, dtype=float).reshape(-1, 1)],
                      biases=[np.array([bias], dtype=float)])


@pytest.fixture
def threshold_env():
    return GaussianThresholdEnv(mean=0.5, std=0.25)


@pytest.fixture
def threshold_bundle(threshold_env):
    """Q = u and G = u on the threshold process: the greedy control is u = -b."""
    spec = threshold_env.process_spec
    return PolicyBundle(q_net=linear_network([0.0, 0.0, 1.0]),
                        constraint_nets=[linear_network([0.0, 0.0, 1.0])],
                        backoffs=np.zeros(1),
                        penalty_weights=np.array([1e6]),
                        control_low=spec.control_low,
                        control_high=spec.control_high,
                        t_f=spec.t_f,
                        env_id="GaussianThreshold-v0")


@pytest.fixture
def approximator():
    return FunctionApproximator
