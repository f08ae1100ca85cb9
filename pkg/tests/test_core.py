import numpy as np
import pytest
from scipy.stats import norm

from ocql.core import EnvironmentSpec, constant_policy, random_policy, rollout
from ocql.envs import make_env
from ocql.envs.process import GaussianThresholdEnv, PhycocyaninFedBatchEnv, SemiBatchReactorEnv
from ocql.errors import IntegrationError, ShapeError


class FailingThresholdEnv(GaussianThresholdEnv):
    def transition(self, state, control, params, t=0, rng=None):
        raise IntegrationError("forced failure", time=0.5)


def test_spec_defaults_and_validation():
    spec = EnvironmentSpec(n_x=1, n_u=1, n_g=2, n_p=0, t_f=3, control_low=[0.0], control_high=[1.0],
                           sampling_time=1.0, state_names=("x",), control_names=("u",))
    assert spec.constraint_names == ("g_1", "g_2")
    assert spec.constraint_scales == (1.0, 1.0)
    np.testing.assert_array_equal(spec.time_grid, [0.0, 1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        EnvironmentSpec(n_x=1, n_u=1, n_g=0, n_p=0, t_f=3, control_low=[1.0], control_high=[1.0],
                        sampling_time=1.0, state_names=("x",), control_names=("u",))
    with pytest.raises(ShapeError):
        EnvironmentSpec(n_x=2, n_u=1, n_g=0, n_p=0, t_f=3, control_low=[0.0], control_high=[1.0],
                        sampling_time=1.0, state_names=("x",), control_names=("u",))


def test_rollout_threshold_process(threshold_env):
    trajectory = rollout(threshold_env, constant_policy([-1.0]), np.random.default_rng(3), seed=3)
    p = trajectory.params[0]
    assert trajectory.states.shape == (2, 1)
    assert trajectory.controls.shape == (1, 1)
    assert trajectory.states[0, 0] == -1.0
    assert trajectory.states[1, 0] == pytest.approx(p - 1.0)
    assert trajectory.objective == pytest.approx(p - 1.0)
    np.testing.assert_allclose(trajectory.constraint_values[:, 0], trajectory.states[:, 0])
    assert trajectory.seed == 3


def test_rollout_is_reproducible_per_seed():
    env = SemiBatchReactorEnv()
    policy = constant_policy([80.0, 360.0])
    first = rollout(env, policy, np.random.default_rng(11))
    second = rollout(env, policy, np.random.default_rng(11))
    np.testing.assert_array_equal(first.states, second.states)
    other = rollout(env, policy, np.random.default_rng(12))
    assert not np.array_equal(first.states, other.states)
    assert not np.array_equal(first.params, other.params)


def test_rollout_rejects_bad_controls(threshold_env):
    with pytest.raises(ValueError):
        rollout(threshold_env, constant_policy([5.0]), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        rollout(threshold_env, constant_policy([0.0, 0.0]), np.random.default_rng(0))


def test_rollout_attaches_episode_and_seed():
    with pytest.raises(IntegrationError) as info:
        rollout(FailingThresholdEnv(), constant_policy([0.0]), np.random.default_rng(0), episode=4, seed=99)
    assert info.value.episode == 4
    assert info.value.seed == 99
    assert "seed=99" in str(info.value)


def test_constant_policy_violation_rate_matches_normal_cdf(threshold_env):
    # x_1 = u + p <= 0 holds with probability Phi((-u - mean) / std)
    rng = np.random.default_rng(0)
    violated = [rollout(threshold_env, constant_policy([-0.6]), rng).violated for _ in range(2000)]
    assert np.mean(violated) == pytest.approx(1.0 - norm.cdf((0.6 - 0.5) / 0.25), abs=0.04)


def test_constraint_values_single_and_batch():
    env = PhycocyaninFedBatchEnv()
    state = np.array([2.0, 900.0, 0.05])
    np.testing.assert_allclose(env.get_constraint_values(state), [100.0, 0.05 - 0.022])
    batch = np.vstack([state, state])
    assert env.get_constraint_values(batch).shape == (2, 2)


def test_simulate_population_and_horizon():
    env = SemiBatchReactorEnv()
    controls = np.tile([100.0, 380.0], (4, 3, 1))
    states = env.simulate(env.nominal_initial_state(), 7, controls)
    assert states.shape == (4, 4, 5)
    single = env.simulate(env.nominal_initial_state(), 7, controls[0])
    np.testing.assert_allclose(single, states[0])
    with pytest.raises(ValueError):
        env.simulate(env.nominal_initial_state(), 8, controls)


def test_simulate_matches_rollout_at_nominal_parameters(threshold_env):
    states = threshold_env.simulate(threshold_env.nominal_initial_state(), 0, np.array([[-0.2]]))
    assert states[-1, 0] == pytest.approx(0.3)


def test_trajectory_frame_columns():
    env = PhycocyaninFedBatchEnv()
    trajectory = rollout(env, constant_policy([250.0, 10.0]), np.random.default_rng(0))
    frame = trajectory.to_frame(env)
    assert list(frame.columns) == ["time", "c_x", "c_N", "c_q", "I", "F_N", "reward", "g_1", "g_2"]
    assert len(frame) == 13
    assert frame["time"].iloc[-1] == 240.0
    assert np.isnan(frame["I"].iloc[-1])
    assert frame["reward"].iloc[-1] == pytest.approx(trajectory.states[-1, 2])


def test_gym_reset_and_step():
    env = make_env("cs2")
    obs = env.reset(seed=0)
    assert obs.shape == (5,)
    done = False
    steps = 0
    while not done:
        obs, reward, done, info = env.step(env.action_space.sample())
        steps += 1
        assert info["constraint_values"].shape == (2,)
    assert steps == 10
    assert reward == pytest.approx(obs[2] * obs[4])
    with pytest.raises(RuntimeError):
        env.step(np.array([0.0, 300.0]))


def test_random_policy_stays_in_box():
    env = make_env("cs1")
    policy = random_policy(env, np.random.default_rng(0))
    controls = np.array([policy(None, 0) for _ in range(100)])
    assert np.all(controls >= env.process_spec.control_low)
    assert np.all(controls <= env.process_spec.control_high)
