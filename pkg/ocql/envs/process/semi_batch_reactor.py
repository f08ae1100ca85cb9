"""
Semi-batch reactor running the consecutive first-order reactions 2A -> B -> 3C.

Stand-in model: the reactor is fed pure A, reaction 1 is exothermic, reaction 2 endothermic,
and a jacket at T_0 exchanges heat with the contents. Uncertain parameters:

    theta_1   activation-energy scale of reaction 1 (E_1/R = 1000 * theta_1 K)
    A_2       pre-exponential factor of reaction 2 (1/h at the 300 K reference)
    theta_4   heat-transfer coefficient of the jacket (L/h)

The rates are

    k_1  = 0.5 * exp(1000 * theta_1 * (1/350 - 1/T))
    k_2  = A_2 * exp(3500 * (1/300 - 1/T))
    dc_A = -k_1 c_A + F/V (c_A,in - c_A)
    dc_B = 0.5 k_1 c_A - k_2 c_B - F/V c_B
    dc_C = 3 k_2 c_B - F/V c_C
    dT   = F/V (T_in - T) + 25 k_1 c_A - 10 k_2 c_B + theta_4 (T_0 - T) / V
    dV   = F
"""
import numpy as np

from ocql.core import EnvironmentSpec
from ocql.envs.process.base_process import BaseProcessEnv
from ocql.errors import DegenerateStateError

SEMI_BATCH_SPEC = EnvironmentSpec(
    n_x=5, n_u=2, n_g=2, n_p=3, t_f=10,
    control_low=np.array([0.0, 280.0]),
    control_high=np.array([200.0, 450.0]),
    sampling_time=0.4,
    state_names=("c_A", "c_B", "c_C", "T", "Vol"),
    control_names=("F", "T_0"),
    constraint_names=("temperature", "volume"),
    constraint_scales=(50.0, 100.0),
)


class SemiBatchReactorEnv(BaseProcessEnv):
    def __init__(self,
                 substeps: int = 20,
                 k1_ref: float = 0.5,
                 T1_ref: float = 350.0,
                 E2_over_R: float = 3500.0,
                 T2_ref: float = 300.0,
                 feed_concentration: float = 4.0,
                 feed_temperature: float = 290.0,
                 heat_of_reaction_1: float = 25.0,
                 heat_of_reaction_2: float = 10.0,
                 param_means=(4.0, 0.08, 100.0),
                 param_variances=(0.1, 1.6e-4, 5.0),
                 initial_state=(0.0, 0.0, 0.0, 290.0, 100.0),
                 temperature_limit: float = 420.0,
                 volume_limit: float = 800.0) -> None:
        super(SemiBatchReactorEnv, self).__init__(SEMI_BATCH_SPEC, substeps=substeps)
        self.k1_ref = k1_ref
        self.T1_ref = T1_ref
        self.E2_over_R = E2_over_R
        self.T2_ref = T2_ref
        self.feed_concentration = feed_concentration
        self.feed_temperature = feed_temperature
        self.heat_of_reaction_1 = heat_of_reaction_1
        self.heat_of_reaction_2 = heat_of_reaction_2

        self.param_means = np.asarray(param_means, dtype=float)
        self.param_variances = np.asarray(param_variances, dtype=float)
        self.initial_state = np.asarray(initial_state, dtype=float)

        self.temperature_limit = temperature_limit
        self.volume_limit = volume_limit

    def derivative(self, state, control, params):
        state, control = np.asarray(state, dtype=float), np.asarray(control, dtype=float)
        c_A, c_B, c_C, T, vol = (state[..., i] for i in range(5))
        feed, jacket = control[..., 0], control[..., 1]
        params = np.asarray(params, dtype=float)
        theta_1, A_2, theta_4 = params[..., 0], params[..., 1], params[..., 2]

        if np.any(vol <= 0):
            raise DegenerateStateError("reactor volume is not positive", time=np.nan)
        if np.any(T <= 0):
            raise DegenerateStateError("reactor temperature is not positive", time=np.nan)

        k_1 = self.k1_ref * np.exp(1000.0 * theta_1 * (1.0 / self.T1_ref - 1.0 / T))
        k_2 = A_2 * np.exp(self.E2_over_R * (1.0 / self.T2_ref - 1.0 / T))
        r_1 = k_1 * c_A
        r_2 = k_2 * c_B
        dilution = feed / vol

        dc_A = -r_1 + dilution * (self.feed_concentration - c_A)
        dc_B = 0.5 * r_1 - r_2 - dilution * c_B
        dc_C = 3.0 * r_2 - dilution * c_C
        dT = dilution * (self.feed_temperature - T) + self.heat_of_reaction_1 * r_1 - \
            self.heat_of_reaction_2 * r_2 + theta_4 * (jacket - T) / vol
        dvol = feed * np.ones_like(vol)
        return np.stack([dc_A, dc_B, dc_C, dT, dvol], axis=-1)

    def constraints(self, states):
        states = np.asarray(states, dtype=float)
        return np.stack([states[:, 3] - self.temperature_limit,
                         states[:, 4] - self.volume_limit], axis=-1)

    def sample_initial(self, rng: np.random.Generator):
        params = self.clamped_normal(rng, self.param_means, self.param_variances, name="reactor parameter")
        return self.initial_state.copy(), params

    def nominal_params(self):
        return self.param_means.copy()

    def nominal_initial_state(self):
        return self.initial_state.copy()

    def terminal_reward(self, states):
        states = np.asarray(states, dtype=float)
        return states[..., 2] * states[..., 4]


if __name__ == '__main__':
    from ocql.core import constant_policy, rollout

    env = SemiBatchReactorEnv()
    trajectory = rollout(env, constant_policy([100.0, 380.0]), np.random.default_rng(0), seed=0)
    print(trajectory.to_frame(env))
