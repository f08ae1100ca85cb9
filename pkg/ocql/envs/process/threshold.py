"""
One-step process whose constraint satisfaction probability has a closed form.

The state jumps from x_0 = -1 to x_1 = u + p with p ~ N(mean, std^2); the constraint is
g(x) = x <= 0 and the reward is x_1. A policy that plays u = c therefore satisfies the
constraint with probability Phi((-c - mean) / std).
"""
from typing import Optional

import numpy as np

from ocql.core import EnvironmentSpec, ProcessEnv

THRESHOLD_SPEC = EnvironmentSpec(
    n_x=1, n_u=1, n_g=1, n_p=1, t_f=1,
    control_low=np.array([-3.0]),
    control_high=np.array([3.0]),
    sampling_time=1.0,
    state_names=("x",),
    control_names=("u",),
    constraint_names=("level",),
    constraint_scales=(1.0,),
)


class GaussianThresholdEnv(ProcessEnv):
    def __init__(self,
                 mean: float = 0.5,
                 std: float = 0.25,
                 initial_state: float = -1.0) -> None:
        super(GaussianThresholdEnv, self).__init__(THRESHOLD_SPEC)
        if std <= 0:
            raise ValueError("std must be positive, got {}".format(std))
        self.mean = mean
        self.std = std
        self.initial_state = initial_state

    def derivative(self, state, control, params):
        # constant rate that lands exactly on u + p after one sampling interval
        state, control = np.asarray(state, dtype=float), np.asarray(control, dtype=float)
        params = np.asarray(params, dtype=float)
        return (control + params - state) / self.process_spec.sampling_time

    def transition(self, state, control, params, t: int = 0, rng: Optional[np.random.Generator] = None):
        state = np.asarray(state, dtype=float)
        return state + self.process_spec.sampling_time * self.derivative(state, control, params)

    def constraints(self, states):
        return np.asarray(states, dtype=float)[:, :1].copy()

    def sample_initial(self, rng: np.random.Generator):
        return np.array([self.initial_state]), np.array([rng.normal(self.mean, self.std)])

    def nominal_params(self):
        return np.array([self.mean])

    def nominal_initial_state(self):
        return np.array([self.initial_state])

    def terminal_reward(self, states):
        return np.asarray(states, dtype=float)[..., 0]
