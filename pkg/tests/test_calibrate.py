import logging

import numpy as np
import pytest
from omegaconf import OmegaConf
from scipy.stats import norm

from ocql.agent import greedy_policy
from ocql.calibrate import broyden_solve, broyden_step, broyden_tune, broyden_update, estimate_satisfaction, \
    finite_difference_jacobian, satisfaction_from_violations, satisfaction_targets, worst_violations_of
from ocql.core import constant_policy
from ocql.envs.process import GaussianThresholdEnv
from ocql.errors import EstimationError, IntegrationError
from ocql.es import EsConfig


class FailingThresholdEnv(GaussianThresholdEnv):
    def transition(self, state, control, params, t=0, rng=None):
        raise IntegrationError("forced failure", time=0.0)


def analytic_backoff(target, mean=0.5, std=0.25):
    # u = -b satisfies x_1 = p - b <= 0 with probability Phi((b - mean) / std)
    return mean + std * norm.ppf(target)


def test_satisfaction_from_violations():
    worst = np.array([[-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [0.0, 0.0]])
    estimate = satisfaction_from_violations(worst)
    np.testing.assert_allclose(estimate.marginals, [0.75, 0.75])
    assert estimate.joint == 0.5
    assert estimate.n_samples == 4


def test_smoothed_satisfaction():
    estimate = satisfaction_from_violations(np.array([[0.0], [-1.0], [1.0]]), smoothing_widths=[0.01])
    assert estimate.marginals[0] == pytest.approx((0.5 + 1.0 + 0.0) / 3, abs=1e-12)


def test_satisfaction_targets():
    np.testing.assert_allclose(satisfaction_targets(0.1, 2), [0.95, 0.95])
    np.testing.assert_allclose(satisfaction_targets(0.1, 2, "marginal"), [0.9, 0.9])
    with pytest.raises(ValueError):
        satisfaction_targets(0.0, 2)
    with pytest.raises(ValueError):
        satisfaction_targets(0.1, 2, "sidak")


def test_secant_condition_after_update():
    rng = np.random.default_rng(0)
    for dim in range(1, 6):
        jacobian = rng.normal(size=(dim, dim))
        step = rng.normal(size=dim)
        change = rng.normal(size=dim)
        np.testing.assert_allclose(broyden_update(jacobian, step, change) @ step, change, atol=1e-12)


@pytest.mark.parametrize("dim", [1, 2, 3, 4, 5])
def test_linear_roots_to_machine_precision(dim):
    rng = np.random.default_rng(dim)
    matrix = 3.0 * np.eye(dim) + 0.5 * rng.normal(size=(dim, dim))
    rhs = rng.normal(size=dim)

    def residual(x):
        return matrix @ x - rhs

    result = broyden_solve(residual, np.zeros(dim), tol=1e-10)
    assert result.converged
    assert result.iterations <= dim + 1
    np.testing.assert_allclose(result.x, np.linalg.solve(matrix, rhs), atol=1e-9)

    exact = broyden_solve(residual, np.zeros(dim), tol=1e-10, jacobian=matrix)
    assert exact.iterations == 1


def test_secant_iterations_on_nonlinear_root():
    result = broyden_solve(lambda x: np.array([x[0] ** 3 - 8.0]), [1.0], tol=1e-10, max_iter=50)
    assert result.converged
    assert result.x[0] == pytest.approx(2.0, abs=1e-9)


def test_iteration_budget_returns_unconverged():
    result = broyden_solve(lambda x: np.array([np.arctan(x[0]) - 1.5]), [0.0], tol=1e-12, max_iter=3,
                           max_step=np.array([0.1]))
    assert not result.converged
    assert result.iterations == 3
    assert result.x[0] == pytest.approx(0.3)


def test_singular_jacobian_is_reset():
    step = broyden_step(np.zeros(2), np.array([-1.0, -1.0]), np.zeros((2, 2)), lambda x: x - 1.0)
    assert step.reset
    np.testing.assert_allclose(step.x, [1.0, 1.0])
    np.testing.assert_allclose(step.residual, [0.0, 0.0])


def test_zero_step_stagnates():
    step = broyden_step(np.zeros(1), np.zeros(1), np.eye(1), lambda x: x)
    assert step.stagnated


def test_finite_difference_jacobian():
    jacobian = finite_difference_jacobian(lambda x: np.array([2.0 * x[0] + x[1], x[1] ** 2]),
                                          np.array([1.0, 3.0]), np.array([5.0, 9.0]), 1e-7)
    np.testing.assert_allclose(jacobian, [[2.0, 1.0], [0.0, 6.0]], atol=1e-5)


def test_estimate_with_rigged_bundle(threshold_env, threshold_bundle):
    rng = np.random.default_rng(0)
    estimate = estimate_satisfaction(threshold_env, threshold_bundle, [0.5], n_samples=400, rng=rng,
                                     es_config=EsConfig())
    assert estimate.marginals[0] == pytest.approx(0.5, abs=0.08)
    with pytest.raises(ValueError):
        estimate_satisfaction(threshold_env, threshold_bundle, [0.5])


def test_failed_rollout_aborts_estimation():
    with pytest.raises(EstimationError):
        worst_violations_of(FailingThresholdEnv(), constant_policy([0.0]), [1, 2, 3])


def test_gaussian_tuning_recovers_quantile_backoff(threshold_env, threshold_bundle):
    n_samples = 2000
    result = broyden_tune(threshold_env, threshold_bundle, omega=0.1, n_samples=n_samples, tol=1e-3, max_iter=30,
                          rng=np.random.default_rng(0), smoothing=True,
                          policy_factory=lambda backoffs: constant_policy([-backoffs[0]]))
    assert result.converged
    assert abs(result.backoffs[0] - analytic_backoff(0.9)) <= 2.0 / np.sqrt(n_samples)
    np.testing.assert_array_equal(threshold_bundle.backoffs, result.backoffs)
    assert result.estimate.n_samples == n_samples
    assert result.history[-1]["backoffs"] == result.backoffs.tolist()


def test_indicator_tuning_recovers_quantile_backoff(threshold_env, threshold_bundle):
    n_samples = 2000
    result = broyden_tune(threshold_env, threshold_bundle, omega=0.1, n_samples=n_samples, tol=1e-2, max_iter=40,
                          rng=np.random.default_rng(1),
                          policy_factory=lambda backoffs: constant_policy([-backoffs[0]]))
    assert abs(result.backoffs[0] - analytic_backoff(0.9)) <= 2.0 / np.sqrt(n_samples)


def test_tune_report_file(tmp_path, threshold_env, threshold_bundle):
    result = broyden_tune(threshold_env, threshold_bundle, omega=0.2, n_samples=300, tol=5e-3, max_iter=20,
                          rng=np.random.default_rng(2), smoothing=True,
                          policy_factory=lambda backoffs: constant_policy([-backoffs[0]]))
    path = str(tmp_path / "tune_report.yaml")
    result.save(path)
    report = OmegaConf.load(path)
    assert report.omega == 0.2
    assert report.targets[0] == pytest.approx(0.8)
    assert report.backoffs[0] == pytest.approx(result.backoffs[0])
    assert len(report.history) == len(result.history)


def test_pooled_violations_match_in_process(threshold_env, threshold_bundle):
    policy = greedy_policy(threshold_bundle, EsConfig(population=8, parents=2, generations=4), backoffs=[0.3])
    seeds = list(range(40))
    serial = worst_violations_of(threshold_env, policy, seeds, workers=1)
    pooled = worst_violations_of(threshold_env, policy, seeds, workers=2)
    assert serial.shape == (40, 1)
    np.testing.assert_array_equal(serial, pooled)


def test_single_sample_tuning_warns(caplog, threshold_env, threshold_bundle):
    with caplog.at_level(logging.WARNING, logger="ocql.calibrate"):
        broyden_tune(threshold_env, threshold_bundle, omega=0.1, n_samples=1, tol=1e-3, max_iter=1,
                     rng=np.random.default_rng(0),
                     policy_factory=lambda backoffs: constant_policy([-backoffs[0]]))
    assert any("single Monte Carlo sample" in record.getMessage() for record in caplog.records)
