"""
Fed-batch photo-production of phycocyanin by the cyanobacterium Arthrospira platensis.

States are biomass c_x (g/L), nitrate c_N (mg/L) and product c_q (mg/L); controls are the
light intensity I (umol/m2/s) and the nitrate feed rate F_N (mg/L/h).
"""
import dataclasses
from typing import Optional

import numpy as np

from ocql.core import EnvironmentSpec
from ocql.envs.process.base_process import BaseProcessEnv
from ocql.errors import DegenerateStateError

PHYCOCYANIN_SPEC = EnvironmentSpec(
    n_x=3, n_u=2, n_g=2, n_p=3, t_f=12,
    control_low=np.array([120.0, 0.0]),
    control_high=np.array([400.0, 40.0]),
    sampling_time=20.0,
    state_names=("c_x", "c_N", "c_q"),
    control_names=("I", "F_N"),
    constraint_names=("nitrate", "product_ratio"),
    # g_2 scale is replaced per instance by product_ratio times the nominal biomass peak
    constraint_scales=(800.0, 0.05),
)


class PhycocyaninFedBatchEnv(BaseProcessEnv):
    def __init__(self,
                 substeps: int = 20,
                 u_m: float = 0.0572,
                 u_d: float = 0.0,
                 Y_NX: float = 504.5,
                 k_m: float = 0.00016,
                 k_sq: float = 23.51,
                 k_iq: float = 800.0,
                 k_d: float = 0.281,
                 K_Nq: float = 16.89,
                 param_means=(178.9, 447.1, 393.1),
                 param_variance_ratio: float = 0.1,
                 initial_mean=(1.0, 150.0),
                 initial_variance=(1e-3, 22.5),
                 nitrate_limit: float = 800.0,
                 product_ratio: float = 0.011,
                 ratio_scale: Optional[float] = None) -> None:
        super(PhycocyaninFedBatchEnv, self).__init__(PHYCOCYANIN_SPEC, substeps=substeps)
        # fixed kinetics
        self.u_m = u_m
        self.u_d = u_d
        self.Y_NX = Y_NX
        self.k_m = k_m
        self.k_sq = k_sq
        self.k_iq = k_iq
        self.k_d = k_d
        self.K_Nq = K_Nq

        # uncertain (k_s, k_i, K_N), variance a fixed fraction of the mean; the third sampled
        # parameter is the nitrate half-saturation constant K_N of the growth term (mean 393.1 mg/L)
        self.param_means = np.asarray(param_means, dtype=float)
        self.param_variances = param_variance_ratio * self.param_means
        self.initial_mean = np.asarray(initial_mean, dtype=float)
        self.initial_variance = np.asarray(initial_variance, dtype=float)

        self.nitrate_limit = nitrate_limit
        self.product_ratio = product_ratio
        if ratio_scale is None:
            ratio_scale = self.product_ratio * float(np.max(self.nominal_biomass()))
        self.process_spec = dataclasses.replace(self.process_spec, constraint_scales=(nitrate_limit, ratio_scale))

    def nominal_biomass(self) -> np.ndarray:
        """Biomass over a nominal batch run at the centre of the control box."""
        spec = self.process_spec
        centre = 0.5 * (spec.control_low + spec.control_high)
        states = self.simulate(self.nominal_initial_state(), 0, np.tile(centre, (spec.t_f, 1)))
        return states[:, 0]

    def derivative(self, state, control, params):
        state, control = np.asarray(state, dtype=float), np.asarray(control, dtype=float)
        c_x, c_N, c_q = state[..., 0], state[..., 1], state[..., 2]
        light, feed = control[..., 0], control[..., 1]
        params = np.asarray(params, dtype=float)
        k_s, k_i, K_N = params[..., 0], params[..., 1], params[..., 2]

        if np.any(np.abs(c_N + K_N) < 1e-12):
            raise DegenerateStateError("c_N + K_N vanished in the nitrate Monod term", time=np.nan)

        growth = self.u_m * light / (light + k_s + light ** 2 / k_i) * c_x * c_N / (c_N + K_N)
        dc_x = growth - self.u_d * c_x
        dc_N = -self.Y_NX * growth + feed
        dc_q = self.k_m * light / (light + self.k_sq + light ** 2 / self.k_iq) * c_x - \
            self.k_d * c_q / (c_N + self.K_Nq)
        return np.stack([dc_x, dc_N, dc_q], axis=-1)

    def constraints(self, states):
        states = np.asarray(states, dtype=float)
        g_nitrate = states[:, 1] - self.nitrate_limit
        g_ratio = states[:, 2] - self.product_ratio * states[:, 0]
        return np.stack([g_nitrate, g_ratio], axis=-1)

    def sample_initial(self, rng: np.random.Generator):
        c_x0, c_N0 = rng.normal(self.initial_mean, np.sqrt(self.initial_variance))
        params = self.clamped_normal(rng, self.param_means, self.param_variances, name="kinetic parameter")
        return np.array([c_x0, c_N0, 0.0]), params

    def nominal_params(self):
        return self.param_means.copy()

    def nominal_initial_state(self):
        return np.array([self.initial_mean[0], self.initial_mean[1], 0.0])

    def terminal_reward(self, states):
        return np.asarray(states, dtype=float)[..., 2]


if __name__ == '__main__':
    from ocql.core import constant_policy, rollout

    env = PhycocyaninFedBatchEnv()
    trajectory = rollout(env, constant_policy([250.0, 10.0]), np.random.default_rng(0), seed=0)
    print(trajectory.to_frame(env))
