import logging
from typing import Optional

import numpy as np

from ocql.core import EnvironmentSpec, ProcessEnv
from ocql.util import rk4_step

log = logging.getLogger(__name__)


class BaseProcessEnv(ProcessEnv):
    """Process described by an ODE, integrated with fixed-step RK4 between sampling instants."""

    def __init__(self,
                 process_spec: EnvironmentSpec,
                 substeps: int = 20) -> None:
        ProcessEnv.__init__(self, process_spec)
        if substeps < 1:
            raise ValueError("substeps must be >= 1, got {}".format(substeps))
        self.substeps = substeps

    def transition(self, state, control, params, t: int = 0, rng: Optional[np.random.Generator] = None):
        dt = self.process_spec.sampling_time
        next_state = rk4_step(self.derivative, state, control, params,
                              dt=dt, substeps=self.substeps, t0=t * dt)
        disturbance = self.disturbance(t, next_state, rng)
        if disturbance is not None:
            next_state = next_state + disturbance
        return next_state

    @staticmethod
    def clamped_normal(rng: np.random.Generator, mean, variance, name: str = "draw") -> np.ndarray:
        """
        Gaussian draw for physically nonnegative quantities, negative values clamped at 0.
        :param mean: vector of means.
        :param variance: vector of variances (not standard deviations).
        """
        mean = np.asarray(mean, dtype=float)
        draw = rng.normal(mean, np.sqrt(np.asarray(variance, dtype=float)))
        negative = draw < 0
        if np.any(negative):
            log.debug("clamped %d negative %s value(s) at 0", int(negative.sum()), name)
            draw = np.where(negative, 0.0, draw)
        return draw
