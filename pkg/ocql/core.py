import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import gym
import numpy as np
import pandas as pd
from gym import spaces

from ocql.errors import IntegrationError, ShapeError
from ocql.util import clip_to_box, in_box

log = logging.getLogger(__name__)

Policy = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class EnvironmentSpec:
    """Static description of a finite-horizon batch process."""
    n_x: int
    n_u: int
    n_g: int
    n_p: int
    t_f: int
    control_low: np.ndarray
    control_high: np.ndarray
    sampling_time: float
    state_names: Tuple[str, ...]
    control_names: Tuple[str, ...]
    constraint_names: Tuple[str, ...] = ()
    # characteristic magnitude of each constraint, used for penalties, damping and smoothing
    constraint_scales: Tuple[float, ...] = ()

    def __post_init__(self):
        low = np.asarray(self.control_low, dtype=float)
        high = np.asarray(self.control_high, dtype=float)
        object.__setattr__(self, "control_low", low)
        object.__setattr__(self, "control_high", high)
        if not self.constraint_names:
            object.__setattr__(self, "constraint_names", tuple("g_{}".format(j + 1) for j in range(self.n_g)))
        if not self.constraint_scales:
            object.__setattr__(self, "constraint_scales", (1.0,) * self.n_g)
        if self.t_f < 1:
            raise ValueError("t_f must be >= 1, got {}".format(self.t_f))
        if self.sampling_time <= 0:
            raise ValueError("sampling_time must be positive, got {}".format(self.sampling_time))
        if low.shape != (self.n_u,) or high.shape != (self.n_u,):
            raise ShapeError("control bounds must have shape ({},)".format(self.n_u))
        if not np.all(low < high):
            raise ValueError("control bounds need lo < hi componentwise, got {} / {}".format(low, high))
        if len(self.state_names) != self.n_x or len(self.control_names) != self.n_u:
            raise ShapeError("state/control names do not match n_x/n_u")
        if len(self.constraint_names) != self.n_g or len(self.constraint_scales) != self.n_g:
            raise ShapeError("constraint names/scales do not match n_g")
        if not all(s > 0 for s in self.constraint_scales):
            raise ValueError("constraint scales must be positive")

    @property
    def control_range(self) -> np.ndarray:
        return self.control_high - self.control_low

    @property
    def time_grid(self) -> np.ndarray:
        return np.arange(self.t_f + 1) * self.sampling_time


@dataclass
class Trajectory:
    """One realised episode; ``rewards[t]`` is received when moving from ``states[t]`` to ``states[t + 1]``."""
    states: np.ndarray
    controls: np.ndarray
    rewards: np.ndarray
    constraint_values: np.ndarray
    params: np.ndarray = field(default_factory=lambda: np.empty(0))
    seed: Optional[int] = None

    @property
    def t_f(self) -> int:
        return self.controls.shape[0]

    @property
    def objective(self) -> float:
        return float(np.sum(self.rewards))

    @property
    def worst_violations(self) -> np.ndarray:
        """max over t of g_{j,t}, one entry per constraint."""
        return self.constraint_values.max(axis=0)

    @property
    def violated(self) -> bool:
        return bool(np.any(self.worst_violations > 0))

    def to_frame(self, env: "ProcessEnv") -> pd.DataFrame:
        """
        Tabulate the trajectory with columns time, state names, control names, reward, g_1..g_ng.
        Row t carries x_t, the control applied at t (empty on the last row) and the reward
        collected on arrival at x_t (0 on the first row).
        """
        spec = env.process_spec
        frame = pd.DataFrame({"time": spec.time_grid[:self.states.shape[0]]})
        for i, name in enumerate(spec.state_names):
            frame[name] = self.states[:, i]
        padded = np.vstack([self.controls, np.full((1, spec.n_u), np.nan)])
        for i, name in enumerate(spec.control_names):
            frame[name] = padded[:, i]
        frame["reward"] = np.concatenate([[0.0], self.rewards])
        for j in range(spec.n_g):
            frame["g_{}".format(j + 1)] = self.constraint_values[:, j]
        return frame

    def write_csv(self, path: str, env: "ProcessEnv") -> None:
        self.to_frame(env).to_csv(path, index=False)


class ProcessEnv(ABC, gym.Env):
    def __init__(self, process_spec: EnvironmentSpec):
        """
        Abstract class for all finite-horizon stochastic batch processes.

        The pure methods (``sample_initial``, ``transition``, ``constraints``, ``simulate``) never
        touch instance state, so one environment can serve many concurrent rollouts, each
        with its own generator. ``reset``/``step`` keep a private episode for interactive use.
        """
        self.process_spec = process_spec
        self.action_space = spaces.Box(low=process_spec.control_low, high=process_spec.control_high,
                                       dtype=np.float64)
        state_high = np.full(process_spec.n_x, np.inf)
        self.observation_space = spaces.Box(-state_high, state_high, dtype=np.float64)
        self._episode_state = None
        self._episode_params = None
        self._episode_time = 0

    # methods to override:
    # ----------------------------

    @abstractmethod
    def derivative(self, state, control, params):
        """
        Right-hand side of the process ODE. Must broadcast over a leading batch axis.
        :return: state rate, same shape as ``state``.
        """
        raise NotImplementedError

    @abstractmethod
    def constraints(self, states):
        """
        Path constraints g_j(x) <= 0.
        :param states: batch of states, shape (B, n_x).
        :return: constraint values, shape (B, n_g).
        """
        raise NotImplementedError

    @abstractmethod
    def sample_initial(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """
        Draw the initial state and the per-episode uncertain parameters.
        :return: (x0, p).
        """
        raise NotImplementedError

    @abstractmethod
    def nominal_params(self) -> np.ndarray:
        raise NotImplementedError

    @abstractmethod
    def nominal_initial_state(self) -> np.ndarray:
        raise NotImplementedError

    @abstractmethod
    def terminal_reward(self, states):
        """
        Economic objective collected at t_f.
        :param states: single state or batch of states.
        """
        raise NotImplementedError

    @abstractmethod
    def transition(self, state, control, params, t: int = 0, rng: Optional[np.random.Generator] = None):
        """
        Advance one sampling interval from time index ``t``. Single or batch states.
        """
        raise NotImplementedError

    def disturbance(self, t: int, state, rng: Optional[np.random.Generator]):
        """
        Additive stochastic disturbance d_t applied after integrating interval t.
        Both case studies are disturbance free.
        """
        return None

    # -----------------------------

    def reward(self, t_next: int, next_state):
        """Reward received on arrival at time index ``t_next``; zero except at t_f."""
        if t_next == self.process_spec.t_f:
            return self.terminal_reward(next_state)
        if np.ndim(next_state) == 1:
            return 0.0
        return np.zeros(np.shape(next_state)[0])

    def get_constraint_values(self, states):
        """
        Return the constraint values of single or batch states.
        :param states: single state (n_x,) or batch (B, n_x).
        :return: vector (n_g,) or matrix (B, n_g).
        """
        states = np.asarray(states, dtype=float)
        if len(states.shape) == 1:  # single state
            return self.constraints(states.reshape(1, states.shape[0]))[0]
        else:
            return self.constraints(states)

    def simulate(self, state, t: int, controls, params=None):
        """
        Open-loop prediction from ``state`` at time index ``t`` under a control sequence,
        without disturbances.
        :param controls: (H, n_u) for one sequence or (P, H, n_u) for a population.
        :param params: model parameters, nominal when omitted.
        :return: states (H + 1, n_x) or (P, H + 1, n_x).
        """
        params = self.nominal_params() if params is None else params
        controls = np.asarray(controls, dtype=float)
        single = len(controls.shape) == 2
        if single:
            controls = controls[None]
        population, horizon = controls.shape[:2]
        if t + horizon > self.process_spec.t_f:
            raise ValueError("horizon {} from t={} runs past t_f={}".format(horizon, t, self.process_spec.t_f))
        x = np.tile(np.asarray(state, dtype=float), (population, 1))
        trajectory = [x]
        for k in range(horizon):
            x = self.transition(x, controls[:, k], params, t + k, rng=None)
            trajectory.append(x)
        states = np.stack(trajectory, axis=1)
        return states[0] if single else states

    def reset(
            self,
            *,
            seed: Optional[int] = None,
            return_info: bool = False,
            options: Optional[dict] = None,
    ):
        super().reset(seed=seed)
        self._episode_state, self._episode_params = self.sample_initial(self.np_random)
        self._episode_time = 0
        obs = self._episode_state.copy()
        if not return_info:
            return obs
        else:
            return obs, {"constraint_values": self.get_constraint_values(obs)}

    def step(self, action):
        if self._episode_state is None:
            raise RuntimeError("call reset() before step()")
        if self._episode_time >= self.process_spec.t_f:
            raise RuntimeError("episode already reached t_f, call reset()")
        control = np.asarray(action, dtype=float)
        self._episode_state = self.transition(self._episode_state, control, self._episode_params,
                                              self._episode_time, rng=self.np_random)
        self._episode_time += 1
        obs = self._episode_state.copy()
        reward = float(self.reward(self._episode_time, obs))
        done = self._episode_time == self.process_spec.t_f
        return obs, reward, done, {"constraint_values": self.get_constraint_values(obs)}


def rollout(env: ProcessEnv, policy: Policy, rng: np.random.Generator,
            episode: Optional[int] = None, seed: Optional[int] = None) -> Trajectory:
    """
    Run one closed-loop episode.
    :param env: process environment.
    :param policy: maps (state, time index) to an in-bounds control.
    :param rng: generator used for the initial/parameter draw and disturbances.
    :param episode: index reported in integration failures.
    :param seed: seed that produced ``rng``, recorded in the trajectory.
    :return: the realised trajectory.
    """
    spec = env.process_spec
    state, params = env.sample_initial(rng)
    states = [state]
    controls, rewards = [], []
    for t in range(spec.t_f):
        control = np.asarray(policy(state, t), dtype=float)
        if control.shape != (spec.n_u,):
            raise ShapeError("policy returned control of shape {}, expected ({},)".format(control.shape, spec.n_u))
        if not in_box(control, spec.control_low, spec.control_high):
            raise ValueError("policy returned out-of-bounds control {} at t={}".format(control, t))
        control = clip_to_box(control, spec.control_low, spec.control_high)
        try:
            state = env.transition(state, control, params, t, rng)
        except IntegrationError as err:
            err.episode = episode if err.episode is None else err.episode
            err.seed = seed if err.seed is None else err.seed
            log.debug("integration failed at t=%d of episode %s", t, episode)
            raise
        states.append(state)
        controls.append(control)
        rewards.append(float(env.reward(t + 1, state)))
    states = np.array(states)
    return Trajectory(states=states,
                      controls=np.array(controls).reshape(spec.t_f, spec.n_u),
                      rewards=np.array(rewards),
                      constraint_values=env.get_constraint_values(states),
                      params=np.asarray(params, dtype=float),
                      seed=seed)


def constant_policy(control: Sequence[float]) -> Policy:
    control = np.asarray(control, dtype=float)

    def policy(state, t):
        return control.copy()

    return policy


def random_policy(env: ProcessEnv, rng: np.random.Generator) -> Policy:
    spec = env.process_spec

    def policy(state, t):
        return rng.uniform(spec.control_low, spec.control_high)

    return policy
