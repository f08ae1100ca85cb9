"""
Backoff self-tuning after training.

Satisfaction probabilities are estimated by Monte Carlo with a fixed pool of episode seeds
(common random numbers), so the residual F_S(b) - (1 - omega_j) is a deterministic function
of the backoffs, and its root is found with Broyden's good method.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from omegaconf import OmegaConf
from scipy import linalg
from scipy.special import expit

from ocql.agent import PolicyBundle, greedy_policy
from ocql.core import Policy, ProcessEnv
from ocql.errors import EstimationError, ShapeError
from ocql.es import EsConfig
from ocql.parallel import RolloutPool, run_rollouts

log = logging.getLogger(__name__)

ResidualFunction = Callable[[np.ndarray], np.ndarray]


@dataclass
class SatisfactionEstimate:
    marginals: np.ndarray
    joint: float
    n_samples: int
    worst_violations: np.ndarray

    def as_dict(self) -> dict:
        return {"marginals": self.marginals.tolist(), "joint": float(self.joint), "n_samples": self.n_samples}


def satisfaction_from_violations(worst_violations, smoothing_widths: Optional[Sequence[float]] = None
                                 ) -> SatisfactionEstimate:
    """
    Empirical probability that max_t g_j,t <= 0, per constraint and jointly.
    :param worst_violations: (S, n_g) worst violation of every trajectory and constraint.
    :param smoothing_widths: optional logistic widths per constraint; the indicator becomes
        expit(-w / width) and the joint indicator the product over constraints.
    """
    worst = np.atleast_2d(np.asarray(worst_violations, dtype=float))
    if worst.shape[0] < 1:
        raise EstimationError("no trajectories to estimate from")
    if smoothing_widths is None:
        satisfied = (worst <= 0).astype(float)
    else:
        satisfied = expit(-worst / np.asarray(smoothing_widths, dtype=float))
    return SatisfactionEstimate(marginals=satisfied.mean(axis=0),
                                joint=float(np.prod(satisfied, axis=1).mean()),
                                n_samples=worst.shape[0],
                                worst_violations=worst)


def worst_violations_of(env: ProcessEnv,
                        policy: Policy,
                        seeds: Sequence[int],
                        progress: bool = False,
                        workers: int = 1,
                        pool: Optional[RolloutPool] = None) -> np.ndarray:
    """Roll out ``policy`` once per seed, returning (S, n_g) worst violations in seed order."""
    results = run_rollouts(env, policy, seeds, workers, pool, progress)
    failures = [result.error for result in results if result.error is not None]
    for err in failures:
        log.warning("rollout failed: %s", err)
    if failures:
        raise EstimationError("{} of {} rollouts failed, first: {}".format(len(failures), len(seeds), failures[0]))
    return np.array([result.trajectory.worst_violations for result in results])


def estimate_satisfaction(env: ProcessEnv,
                          bundle: PolicyBundle,
                          backoffs,
                          n_samples: Optional[int] = None,
                          rng: Optional[np.random.Generator] = None,
                          seeds: Optional[Sequence[int]] = None,
                          es_config: Optional[EsConfig] = None,
                          smoothing: bool = False,
                          policy_seed: int = 0,
                          progress: bool = False,
                          workers: int = 1) -> SatisfactionEstimate:
    """
    Satisfaction of the greedy policy that uses ``backoffs`` in its sub-problem.
    Either pass an explicit seed pool or ``n_samples`` and a generator to draw one.
    """
    seeds = _seed_pool(n_samples, rng, seeds)
    policy = greedy_policy(bundle, es_config, seed=policy_seed, backoffs=backoffs)
    worst = worst_violations_of(env, policy, seeds, progress, workers)
    return satisfaction_from_violations(worst, _smoothing_widths(env, smoothing))


def _seed_pool(n_samples, rng, seeds) -> List[int]:
    if seeds is None:
        if n_samples is None or rng is None:
            raise ValueError("pass either seeds or n_samples and rng")
        if n_samples < 1:
            raise ValueError("need at least one Monte Carlo sample, got {}".format(n_samples))
        seeds = rng.integers(2 ** 31 - 1, size=n_samples)
    return [int(s) for s in seeds]


def _smoothing_widths(env: ProcessEnv, smoothing: bool):
    if not smoothing:
        return None
    return 0.01 * np.asarray(env.process_spec.constraint_scales, dtype=float)


@dataclass
class BroydenStep:
    x: np.ndarray
    residual: np.ndarray
    jacobian: np.ndarray
    step: np.ndarray
    stagnated: bool = False
    reset: bool = False


def broyden_update(jacobian: np.ndarray, step: np.ndarray, residual_change: np.ndarray) -> np.ndarray:
    """Rank-one secant update, afterwards B_new @ step == residual_change."""
    step = np.asarray(step, dtype=float)
    return jacobian + np.outer(residual_change - jacobian @ step, step) / (step @ step)


def broyden_step(x, residual, jacobian, residual_fn: ResidualFunction,
                 max_step: Optional[np.ndarray] = None,
                 reset_jacobian: Optional[np.ndarray] = None) -> BroydenStep:
    """
    One quasi-Newton step dx = -B^-1 r with componentwise damping |dx_j| <= max_step_j,
    followed by the secant update of B. A singular B is replaced by ``reset_jacobian``
    (the identity when not given) before solving.
    """
    x = np.asarray(x, dtype=float)
    residual = np.asarray(residual, dtype=float)
    jacobian = np.array(jacobian, dtype=float)
    if jacobian.shape != (x.shape[0], x.shape[0]) or residual.shape != x.shape:
        raise ShapeError("Jacobian {} does not match unknowns {}".format(jacobian.shape, x.shape))

    reset = False
    if not np.all(np.isfinite(jacobian)) or np.linalg.cond(jacobian) > 1e12:
        jacobian = np.eye(x.shape[0]) if reset_jacobian is None else np.array(reset_jacobian, dtype=float)
        log.warning("singular Broyden Jacobian, reset to %s", np.diag(jacobian).tolist())
        reset = True
    step = -linalg.solve(jacobian, residual)
    if max_step is not None:
        step = np.clip(step, -np.asarray(max_step), np.asarray(max_step))
    if not np.any(step):
        return BroydenStep(x=x, residual=residual, jacobian=jacobian, step=step, stagnated=True, reset=reset)

    new_x = x + step
    new_residual = np.asarray(residual_fn(new_x), dtype=float)
    jacobian = broyden_update(jacobian, step, new_residual - residual)
    return BroydenStep(x=new_x, residual=new_residual, jacobian=jacobian, step=step, reset=reset)


def finite_difference_jacobian(residual_fn: ResidualFunction, x, residual, steps) -> np.ndarray:
    """Forward differences with one step size per unknown."""
    x = np.asarray(x, dtype=float)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), x.shape)
    jacobian = np.zeros((residual.shape[0], x.shape[0]))
    for i in range(x.shape[0]):
        shifted = x.copy()
        shifted[i] += steps[i]
        jacobian[:, i] = (np.asarray(residual_fn(shifted), dtype=float) - residual) / steps[i]
    return jacobian


@dataclass
class BroydenResult:
    x: np.ndarray
    residual: np.ndarray
    jacobian: np.ndarray
    iterations: int
    converged: bool
    history: List[np.ndarray] = field(default_factory=list)


def broyden_solve(residual_fn: ResidualFunction,
                  x0,
                  tol: float = 1e-10,
                  max_iter: int = 50,
                  jacobian: Optional[np.ndarray] = None,
                  fd_steps=1e-6,
                  max_step: Optional[np.ndarray] = None,
                  reset_jacobian: Optional[np.ndarray] = None) -> BroydenResult:
    """
    Solve residual_fn(x) = 0 with Broyden's good method.

    The initial Jacobian is ``jacobian`` or, when omitted, forward differences with
    ``fd_steps``. Running out of iterations, or a zero step before reaching ``tol``, returns a
    non-converged result rather than raising.
    """
    if tol <= 0:
        raise ValueError("tol must be positive, got {}".format(tol))
    x = np.array(x0, dtype=float).reshape(-1)
    residual = np.asarray(residual_fn(x), dtype=float)
    history = [x.copy()]
    if jacobian is None and np.max(np.abs(residual)) > tol:
        jacobian = finite_difference_jacobian(residual_fn, x, residual, fd_steps)

    iterations = 0
    while np.max(np.abs(residual)) > tol and iterations < max_iter:
        result = broyden_step(x, residual, jacobian, residual_fn, max_step, reset_jacobian)
        if result.stagnated:
            log.warning("Broyden step vanished at iteration %d with residual %s", iterations, residual.tolist())
            break
        x, residual, jacobian = result.x, result.residual, result.jacobian
        iterations += 1
        history.append(x.copy())
    return BroydenResult(x=x, residual=residual, jacobian=jacobian, iterations=iterations,
                         converged=bool(np.max(np.abs(residual)) <= tol), history=history)


def satisfaction_targets(omega: float, n_g: int, allocation: str = "bonferroni") -> np.ndarray:
    """Per-constraint targets 1 - omega_j, omega_j = omega / n_g (bonferroni) or omega (marginal)."""
    if not 0.0 < omega < 1.0:
        raise ValueError("omega must lie in (0, 1), got {}".format(omega))
    if allocation == "bonferroni":
        return np.full(n_g, 1.0 - omega / n_g)
    if allocation == "marginal":
        return np.full(n_g, 1.0 - omega)
    raise ValueError("unknown allocation {!r}, use 'bonferroni' or 'marginal'".format(allocation))


@dataclass
class TuneResult:
    backoffs: np.ndarray
    converged: bool
    iterations: int
    estimate: SatisfactionEstimate
    targets: np.ndarray
    omega: float
    history: List[dict] = field(default_factory=list)

    @property
    def residual(self) -> np.ndarray:
        return self.estimate.marginals - self.targets

    def to_report(self) -> dict:
        return {
            "omega": self.omega,
            "targets": self.targets.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
            "backoffs": self.backoffs.tolist(),
            "marginals": self.estimate.marginals.tolist(),
            "joint": float(self.estimate.joint),
            "n_samples": self.estimate.n_samples,
            "history": self.history,
        }

    def save(self, path: str) -> None:
        OmegaConf.save(OmegaConf.create(self.to_report()), path)


def broyden_tune(env: ProcessEnv,
                 bundle: PolicyBundle,
                 omega: float,
                 n_samples: int,
                 tol: float,
                 max_iter: int,
                 rng: np.random.Generator,
                 allocation: str = "bonferroni",
                 smoothing: bool = False,
                 es_config: Optional[EsConfig] = None,
                 initial_backoffs=None,
                 fd_fraction: float = 0.02,
                 damping_fraction: float = 0.2,
                 policy_factory: Optional[Callable[[np.ndarray], Policy]] = None,
                 progress: bool = False,
                 workers: int = 1) -> TuneResult:
    """
    Tune the deployment backoffs so that every marginal satisfaction probability meets its
    target, then write them into ``bundle``.

    :param env: process environment.
    :param bundle: trained networks; its backoffs are replaced by the tuned ones.
    :param omega: allowed joint violation probability.
    :param n_samples: size S of the common seed pool.
    :param tol: convergence threshold on the largest absolute residual.
    :param max_iter: Broyden iteration budget.
    :param rng: draws the seed pool.
    :param allocation: how omega is split over the constraints.
    :param smoothing: use the logistic-smoothed indicator (width 1% of each constraint scale).
    :param es_config: search budget of the greedy policy.
    :param initial_backoffs: start point, zero (no tightening) by default.
    :param fd_fraction: forward-difference step as a fraction of each constraint scale.
    :param damping_fraction: largest backoff change per iteration as a fraction of each scale.
    :param policy_factory: maps backoffs to a policy, defaults to the bundle's greedy policy.
    :param workers: rollout processes per estimate, 0 for one per core.
    :return: tuning outcome with the per-iteration history.
    """
    spec = env.process_spec
    n_g = spec.n_g
    scales = np.asarray(spec.constraint_scales, dtype=float)
    targets = satisfaction_targets(omega, n_g, allocation)
    if n_samples == 1:
        log.warning("tuning with a single Monte Carlo sample, satisfaction estimates are 0 or 1")
    seeds = _seed_pool(n_samples, rng, None)
    widths = _smoothing_widths(env, smoothing)
    if policy_factory is None:
        def policy_factory(backoffs):
            return greedy_policy(bundle, es_config, seed=0, backoffs=backoffs)

    estimates = {}
    history = []

    def residual_fn(backoffs):
        worst = worst_violations_of(env, policy_factory(backoffs), seeds, progress, pool=pool)
        estimate = satisfaction_from_violations(worst, widths)
        estimates["last"] = estimate
        history.append({"evaluation": len(history),
                        "backoffs": np.asarray(backoffs, dtype=float).tolist(),
                        "residuals": (estimate.marginals - targets).tolist(),
                        "marginals": estimate.marginals.tolist(),
                        "joint": float(estimate.joint)})
        log.info("backoffs %s -> marginals %s joint %.4f", np.round(backoffs, 6).tolist(),
                 np.round(estimate.marginals, 4).tolist(), estimate.joint)
        return estimate.marginals - targets

    x0 = np.zeros(n_g) if initial_backoffs is None else np.asarray(initial_backoffs, dtype=float)
    with RolloutPool(env, workers) as pool:
        result = broyden_solve(residual_fn, x0, tol=tol, max_iter=max_iter,
                               fd_steps=fd_fraction * scales,
                               max_step=damping_fraction * scales,
                               reset_jacobian=np.diag(1.0 / scales))

        # the last evaluation may be a finite-difference column, re-estimate at the returned point
        if not np.array_equal(history[-1]["backoffs"], result.x.tolist()):
            residual_fn(result.x)
    estimate = estimates["last"]
    if not result.converged:
        log.warning("backoff tuning did not converge in %d iterations, residual %s",
                    result.iterations, result.residual.tolist())
    bundle.backoffs = result.x.copy()
    return TuneResult(backoffs=result.x.copy(), converged=result.converged, iterations=result.iterations,
                      estimate=estimate, targets=targets, omega=omega, history=history)
