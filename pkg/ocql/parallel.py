"""
Seeded Monte Carlo rollouts over a process pool.

Every rollout builds its own generator from its seed, so the results are the same for any
number of workers. Results come back in seed order; with ``workers == 1`` nothing leaves the
calling process.
"""
import logging
import multiprocessing as mp
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from ocql.core import Policy, ProcessEnv, Trajectory, rollout
from ocql.errors import IntegrationError

log = logging.getLogger(__name__)


class TimedPolicy:
    def __init__(self, policy: Policy):
        """Wraps any policy and records the wall-clock time of every call."""
        self.policy = policy
        self.solve_times: List[float] = []

    def __call__(self, x, t):
        start = time.perf_counter()
        control = self.policy(x, t)
        self.solve_times.append(time.perf_counter() - start)
        return control


class EpisodePolicy:
    """A policy that draws its randomness from the generator of the episode it runs in."""

    def for_episode(self, rng: np.random.Generator) -> Policy:
        raise NotImplementedError


@dataclass
class RolloutResult:
    episode: int
    seed: int
    trajectory: Optional[Trajectory] = None
    solve_times: List[float] = field(default_factory=list)
    error: Optional[IntegrationError] = None


def run_episode(env: ProcessEnv, policy, episode: int, seed: int) -> RolloutResult:
    """One rollout on ``default_rng(seed)``; integration failures are returned, not raised."""
    rng = np.random.default_rng(seed)
    if isinstance(policy, EpisodePolicy):
        policy = policy.for_episode(rng)
    timed = TimedPolicy(policy)
    try:
        trajectory = rollout(env, timed, rng, episode=episode, seed=seed)
    except IntegrationError as err:
        return RolloutResult(episode, seed, solve_times=timed.solve_times, error=err)
    return RolloutResult(episode, seed, trajectory, timed.solve_times)


_worker_env: Optional[ProcessEnv] = None


def _init_worker(env: ProcessEnv) -> None:
    global _worker_env
    _worker_env = env


def _run_task(task) -> RolloutResult:
    policy, episode, seed = task
    return run_episode(_worker_env, policy, episode, seed)


def resolve_workers(workers: int) -> int:
    if workers < 0:
        raise ValueError("workers must be >= 0 (0 uses every core), got {}".format(workers))
    return workers or mp.cpu_count()


class RolloutPool:
    def __init__(self, env: ProcessEnv, workers: int = 1):
        """
        Rollouts of one environment. The environment is shipped to each worker once; the
        policy travels with every batch of seeds.
        :param env: process environment.
        :param workers: number of processes, 0 for one per core, 1 for in-process.
        """
        self.env = env
        self.workers = resolve_workers(workers)
        self._pool = None
        if self.workers > 1:
            self._pool = mp.Pool(self.workers, initializer=_init_worker, initargs=(env,))
            log.debug("started %d rollout workers", self.workers)

    def run(self, policy, seeds: Sequence[int], progress: bool = False, desc: str = "rollouts"
            ) -> List[RolloutResult]:
        tasks = [(policy, episode, int(seed)) for episode, seed in enumerate(seeds)]
        if self._pool is None:
            results = (run_episode(self.env, *task) for task in tasks)
        else:
            chunksize = max(1, len(tasks) // (4 * self.workers))
            results = self._pool.imap(_run_task, tasks, chunksize)
        return list(tqdm(results, total=len(tasks), desc=desc, disable=not progress))

    def close(self) -> None:
        if self._pool is not None:
            self._pool.close()
            self._pool.join()
            self._pool = None

    def __enter__(self) -> "RolloutPool":
        return self

    def __exit__(self, exc_type, exc_value, traceback) -> None:
        if exc_type is not None and self._pool is not None:
            self._pool.terminate()
        self.close()


def run_rollouts(env: ProcessEnv,
                 policy,
                 seeds: Sequence[int],
                 workers: int = 1,
                 pool: Optional[RolloutPool] = None,
                 progress: bool = False,
                 desc: str = "rollouts") -> List[RolloutResult]:
    """Roll out ``policy`` once per seed on ``pool``, or on a pool opened for this call."""
    if pool is not None:
        return pool.run(policy, seeds, progress, desc)
    with RolloutPool(env, workers) as own_pool:
        return own_pool.run(policy, seeds, progress, desc)
