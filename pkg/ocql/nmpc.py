"""
Nominal shrinking-horizon NMPC baseline.

At every sampling instant the remaining control sequence u_t..u_{t_f-1} (piecewise constant)
is optimised on the nominal model, parameters at their means and no disturbances, and the
first control is applied.
"""
import logging
import time
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ocql.core import ProcessEnv
from ocql.es import EsConfig, maximize

log = logging.getLogger(__name__)


@dataclass
class NmpcConfig:
    population: int = 60
    parents: int = 12
    generations: int = 60
    sigma_fraction: float = 0.1
    halve_every: int = 20
    penalty_numerator: float = 1e6
    # reject constraint-violating candidates outright instead of penalising them
    hard_constraints: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.penalty_numerator <= 0:
            raise ValueError("penalty_numerator must be positive")

    def es_config(self) -> EsConfig:
        return EsConfig(population=self.population, parents=self.parents, generations=self.generations,
                        sigma_fraction=self.sigma_fraction, halve_every=self.halve_every)


@dataclass
class NmpcSolution:
    control: np.ndarray
    sequence: np.ndarray
    objective: float
    violation: float
    fitness: float


def predicted_fitness(env: ProcessEnv, x, t: int, sequences: np.ndarray, config: NmpcConfig,
                      params=None) -> np.ndarray:
    """
    Penalised nominal objective of a population of control sequences.
    :param sequences: (P, H, n_u) with H = t_f - t.
    :return: (P,) fitness, larger is better.
    """
    objective, violation = _predict(env, x, t, sequences, config, params)
    if config.hard_constraints:
        # feasible candidates always rank above infeasible ones
        return np.where(violation > 0, -1e12 - violation, objective)
    return objective - violation


def _predict(env: ProcessEnv, x, t, sequences, config, params=None):
    spec = env.process_spec
    population, horizon = sequences.shape[:2]
    states = env.simulate(x, t, sequences, params)
    objective = np.zeros(population)
    for k in range(1, horizon + 1):
        objective = objective + np.asarray(env.reward(t + k, states[:, k]), dtype=float)
    g = env.get_constraint_values(states[:, 1:].reshape(-1, spec.n_x)).reshape(population, horizon, spec.n_g)
    weights = config.penalty_numerator / np.asarray(spec.constraint_scales, dtype=float)
    violation = (np.maximum(0.0, g) * weights).sum(axis=(1, 2))
    return objective, violation


def nmpc_optimize(env: ProcessEnv, x, t: int, config: NmpcConfig, rng: np.random.Generator,
                  warm_start: Optional[np.ndarray] = None) -> NmpcSolution:
    spec = env.process_spec
    if not 0 <= t < spec.t_f:
        raise ValueError("NMPC needs 0 <= t < t_f, got t={}".format(t))
    horizon = spec.t_f - t
    low = np.tile(spec.control_low, horizon)
    high = np.tile(spec.control_high, horizon)
    params = env.nominal_params()

    def batch_fitness(flat):
        return predicted_fitness(env, x, t, flat.reshape(-1, horizon, spec.n_u), config, params)

    initial = None if warm_start is None else np.asarray(warm_start, dtype=float).reshape(-1)
    result = maximize(batch_fitness, low, high, config.es_config(), rng, initial=initial)
    sequence = result.x.reshape(horizon, spec.n_u)
    objective, violation = _predict(env, x, t, sequence[None], config, params)
    if violation[0] > 0:
        log.debug("NMPC best candidate at t=%d violates the nominal constraints, penalty %.4g", t, violation[0])
    return NmpcSolution(control=sequence[0].copy(), sequence=sequence, objective=float(objective[0]),
                        violation=float(violation[0]), fitness=result.fitness)


class NmpcPolicy:
    def __init__(self, env: ProcessEnv, config: NmpcConfig):
        """
        Receding-horizon policy. The previous solution's tail warm-starts the next solve and
        the search stream at time t is derived from (seed, t).
        """
        self.env = env
        self.config = config
        self.solve_times: List[float] = []
        self.last_solution: Optional[NmpcSolution] = None

    def __call__(self, x, t: int) -> np.ndarray:
        warm_start = None
        if t > 0 and self.last_solution is not None and self.last_solution.sequence.shape[0] == \
                self.env.process_spec.t_f - t + 1:
            warm_start = self.last_solution.sequence[1:]
        start = time.perf_counter()
        solution = nmpc_optimize(self.env, x, t, self.config, np.random.default_rng([self.config.seed, t]),
                                 warm_start)
        self.solve_times.append(time.perf_counter() - start)
        self.last_solution = solution
        return solution.control


def nmpc_policy(env: ProcessEnv, config: NmpcConfig) -> NmpcPolicy:
    return NmpcPolicy(env, config)
