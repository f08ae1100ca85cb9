"""
Oracle-assisted constrained Q-learning.

The Q-network sees (x_t, t, u_t) and learns the Monte Carlo return; one constraint network
per path constraint sees (x_t, t_f - t, u_t) and learns the worst future violation. Controls
are chosen by an evolution strategy on the penalised fitness

    f(u) = Q(x, t, u) + sum_j C_j min(0, -(G_j(x, t_f - t, u) + b_j))
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from omegaconf import OmegaConf
from tqdm import tqdm

from ocql.core import ProcessEnv, Trajectory
from ocql.errors import NonFiniteError, ShapeError, TrainingError
from ocql.es import EsConfig, maximize
from ocql.memory import RingBuffer, dump_buffers, extract_oracle_targets, extract_q_targets, load_buffers, \
    to_arrays
from ocql.nnet import AdamState, Approximator, MlpNetwork, adam_step, backward, init_network, load_network, \
    save_network
from ocql.parallel import EpisodePolicy, RolloutPool

log = logging.getLogger(__name__)

BUNDLE_MANIFEST = "manifest.yaml"
BUNDLE_VERSION = 1


@dataclass
class AgentConfig:
    iterations: int = 2000
    episodes: int = 100
    epsilon: float = 0.99
    epsilon_decay: float = 0.99
    backoff_decay: float = 0.995
    # relaxed (negative) backoffs used by the sub-problem during training
    initial_backoffs: List[float] = field(default_factory=lambda: [-500.0, -0.05])
    penalty_numerator: float = 1e6
    gamma: float = 1.0
    q_buffer_size: int = 3000
    constraint_buffer_size: int = 30000
    q_batch_size: int = 100
    constraint_batch_sizes: List[int] = field(default_factory=lambda: [500, 1000])
    hidden_sizes: List[int] = field(default_factory=lambda: [200, 200])
    leaky_slope: float = 0.01
    learning_rate: float = 1e-3
    gradient_steps: int = 1
    huber_delta: float = 1.0
    oracle_include_current: bool = False
    # "running" refits input/target statistics to the buffers before every update, "frozen" keeps the first
    normalization: str = "running"
    es: EsConfig = field(default_factory=EsConfig)

    def __post_init__(self):
        if self.iterations < 0 or self.episodes < 1:
            raise ValueError("need iterations >= 0 and episodes >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1], got {}".format(self.epsilon))
        for name in ("epsilon_decay", "backoff_decay"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError("{} must lie in (0, 1], got {}".format(name, value))
        if self.penalty_numerator <= 0:
            raise ValueError("penalty_numerator must be positive")
        if self.gradient_steps < 1:
            raise ValueError("gradient_steps must be >= 1")
        if self.normalization not in ("running", "frozen"):
            raise ValueError("normalization must be 'running' or 'frozen', got {!r}".format(self.normalization))


def penalty_weights(constraint_scales: Sequence[float], numerator: float = 1e6) -> np.ndarray:
    """C_j = numerator / scale_j."""
    return numerator / np.asarray(constraint_scales, dtype=float)


@dataclass
class PolicyBundle:
    q_net: Approximator
    constraint_nets: List[Approximator]
    backoffs: np.ndarray
    penalty_weights: np.ndarray
    control_low: np.ndarray
    control_high: np.ndarray
    t_f: int
    env_id: str = ""

    def __post_init__(self):
        self.backoffs = np.asarray(self.backoffs, dtype=float)
        self.penalty_weights = np.asarray(self.penalty_weights, dtype=float)
        self.control_low = np.asarray(self.control_low, dtype=float)
        self.control_high = np.asarray(self.control_high, dtype=float)
        n_g = len(self.constraint_nets)
        if self.backoffs.shape != (n_g,) or self.penalty_weights.shape != (n_g,):
            raise ShapeError("need one backoff and one penalty weight per constraint network")

    @property
    def n_g(self) -> int:
        return len(self.constraint_nets)

    def with_backoffs(self, backoffs) -> "PolicyBundle":
        return PolicyBundle(self.q_net, self.constraint_nets, np.array(backoffs, dtype=float),
                            self.penalty_weights, self.control_low, self.control_high, self.t_f, self.env_id)

    def save(self, path: str) -> None:
        """Directory holding ``manifest.yaml`` and one HDF5 file per network."""
        os.makedirs(path, exist_ok=True)
        save_network(self.q_net, os.path.join(path, "q.h5"))
        for j, net in enumerate(self.constraint_nets):
            save_network(net, os.path.join(path, "g_{}.h5".format(j)))
        manifest = OmegaConf.create({
            "version": BUNDLE_VERSION,
            "env_id": self.env_id,
            "t_f": self.t_f,
            "n_g": self.n_g,
            "backoffs": self.backoffs.tolist(),
            "penalty_weights": self.penalty_weights.tolist(),
            "control_low": self.control_low.tolist(),
            "control_high": self.control_high.tolist(),
        })
        OmegaConf.save(manifest, os.path.join(path, BUNDLE_MANIFEST))

    @classmethod
    def load(cls, path: str) -> "PolicyBundle":
        manifest_path = os.path.join(path, BUNDLE_MANIFEST)
        if not os.path.isfile(manifest_path):
            raise FileNotFoundError("no policy bundle at {}".format(path))
        manifest = OmegaConf.load(manifest_path)
        if manifest.version != BUNDLE_VERSION:
            raise ValueError("unsupported bundle version {}".format(manifest.version))
        return cls(q_net=load_network(os.path.join(path, "q.h5")),
                   constraint_nets=[load_network(os.path.join(path, "g_{}.h5".format(j)))
                                    for j in range(manifest.n_g)],
                   backoffs=np.array(manifest.backoffs, dtype=float),
                   penalty_weights=np.array(manifest.penalty_weights, dtype=float),
                   control_low=np.array(manifest.control_low, dtype=float),
                   control_high=np.array(manifest.control_high, dtype=float),
                   t_f=int(manifest.t_f),
                   env_id=str(manifest.env_id))


def q_inputs(x, t: int, controls: np.ndarray) -> np.ndarray:
    controls = np.atleast_2d(controls)
    head = np.tile(np.concatenate([np.asarray(x, dtype=float), [t]]), (controls.shape[0], 1))
    return np.hstack([head, controls])


def constraint_inputs(x, time_to_termination: int, controls: np.ndarray) -> np.ndarray:
    return q_inputs(x, time_to_termination, controls)


def fitness_batch(controls, x, t: int, bundle: PolicyBundle, backoffs=None) -> np.ndarray:
    """Penalised fitness of a population of controls, shape (P, n_u) -> (P,)."""
    backoffs = bundle.backoffs if backoffs is None else np.asarray(backoffs, dtype=float)
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    values = np.asarray(bundle.q_net.predict(q_inputs(x, t, controls)), dtype=float)
    g_in = constraint_inputs(x, bundle.t_f - t, controls)
    for j, net in enumerate(bundle.constraint_nets):
        margin = np.asarray(net.predict(g_in), dtype=float) + backoffs[j]
        values = values + bundle.penalty_weights[j] * np.minimum(0.0, -margin)
    return values


def fitness(u, x, t: int, bundle: PolicyBundle, backoffs=None) -> float:
    return float(fitness_batch(np.asarray(u, dtype=float)[None], x, t, bundle, backoffs)[0])


def select_control(x, t: int, bundle: PolicyBundle, es_config: EsConfig, rng: np.random.Generator,
                   backoffs=None, initial=None) -> np.ndarray:
    """Best control found by the evolution strategy on the penalised fitness."""
    result = maximize(lambda controls: fitness_batch(controls, x, t, bundle, backoffs),
                      bundle.control_low, bundle.control_high, es_config, rng, initial=initial)
    if log.isEnabledFor(logging.DEBUG):
        b = bundle.backoffs if backoffs is None else np.asarray(backoffs, dtype=float)
        g_in = constraint_inputs(x, bundle.t_f - t, result.x[None])
        margins = [float(net.predict(g_in)[0]) + b[j] for j, net in enumerate(bundle.constraint_nets)]
        if any(m > 0 for m in margins):
            log.debug("best control at t=%d violates the tightened constraints, margins %s", t, margins)
    return result.x


def epsilon_greedy(x, t: int, bundle: PolicyBundle, epsilon: float, rng: np.random.Generator,
                   es_config: Optional[EsConfig] = None, backoffs=None) -> np.ndarray:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1], got {}".format(epsilon))
    if rng.random() < epsilon:
        return rng.uniform(bundle.control_low, bundle.control_high)
    return select_control(x, t, bundle, es_config or EsConfig(), rng, backoffs)


class GreedyPolicy:
    def __init__(self, bundle: PolicyBundle, es_config: Optional[EsConfig] = None, seed: int = 0, backoffs=None):
        """
        Deterministic policy using the bundle's backoffs (or ``backoffs``). The search stream is
        derived from (seed, t), so the policy is a pure function of (x, t).
        """
        self.bundle = bundle
        self.es_config = es_config or EsConfig()
        self.seed = seed
        self.backoffs = backoffs

    def __call__(self, x, t):
        return select_control(x, t, self.bundle, self.es_config, np.random.default_rng([self.seed, t]),
                              self.backoffs)


def greedy_policy(bundle: PolicyBundle, es_config: Optional[EsConfig] = None, seed: int = 0,
                  backoffs=None) -> GreedyPolicy:
    return GreedyPolicy(bundle, es_config, seed, backoffs)


class EpsilonGreedyPolicy(EpisodePolicy):
    """Training behaviour policy; exploration and search draw from the episode's generator."""

    def __init__(self, bundle: PolicyBundle, epsilon: float, es_config: Optional[EsConfig] = None, backoffs=None):
        self.bundle = bundle
        self.epsilon = epsilon
        self.es_config = es_config
        self.backoffs = backoffs

    def for_episode(self, rng: np.random.Generator):
        def policy(x, t):
            return epsilon_greedy(x, t, self.bundle, self.epsilon, rng, self.es_config, self.backoffs)

        return policy


@dataclass
class TrainingBuffers:
    q: RingBuffer
    constraints: List[RingBuffer]

    @classmethod
    def empty(cls, n_g: int, config: AgentConfig) -> "TrainingBuffers":
        return cls(q=RingBuffer(config.q_buffer_size),
                   constraints=[RingBuffer(config.constraint_buffer_size) for _ in range(n_g)])

    @classmethod
    def load(cls, path: str) -> "TrainingBuffers":
        q_buffer, constraint_buffers = load_buffers(path)
        return cls(q=q_buffer, constraints=constraint_buffers)

    def dump(self, path: str) -> None:
        dump_buffers(path, self.q, self.constraints)


class TrainingLog:
    def __init__(self, path: Optional[str] = None, keep_existing: bool = False):
        """
        Per-iteration training records, kept in memory and optionally appended to a
        JSON-lines file. The file is truncated unless ``keep_existing`` is set.
        """
        self.path = path
        self.records: List[dict] = []
        if path is not None and not keep_existing:
            open(path, 'w').close()

    def append(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, 'a') as log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")

    @staticmethod
    def read(path: str) -> List[dict]:
        with open(path) as log_file:
            return [json.loads(line) for line in log_file if line.strip()]


def init_bundle(env: ProcessEnv, config: AgentConfig, rng: np.random.Generator, env_id: str = "",
                constraint_scales: Optional[Sequence[float]] = None) -> PolicyBundle:
    spec = env.process_spec
    sizes = [spec.n_x + 1 + spec.n_u] + list(config.hidden_sizes) + [1]
    scales = spec.constraint_scales if constraint_scales is None else constraint_scales
    return PolicyBundle(q_net=init_network(sizes, rng, config.leaky_slope),
                        constraint_nets=[init_network(sizes, rng, config.leaky_slope) for _ in range(spec.n_g)],
                        backoffs=np.zeros(spec.n_g),
                        penalty_weights=penalty_weights(scales, config.penalty_numerator),
                        control_low=spec.control_low,
                        control_high=spec.control_high,
                        t_f=spec.t_f,
                        env_id=env_id)


def _fit(net: MlpNetwork, buffer: RingBuffer, batch_size: int, state: AdamState, config: AgentConfig,
         rng: np.random.Generator, name: str) -> float:
    if config.normalization == "running" or not net.normalized:
        net.set_normalization(*to_arrays(buffer.contents()))
    loss = np.nan
    for _ in range(config.gradient_steps):
        inputs, targets = to_arrays(buffer.sample_minibatch(batch_size, rng))
        loss, grads = backward(net, inputs, targets, config.huber_delta)
        if not np.isfinite(loss):
            raise TrainingError("non-finite {} loss at Adam step {} (targets in [{:.4g}, {:.4g}])".format(
                name, state.step, float(np.min(targets)), float(np.max(targets))))
        try:
            adam_step(net, grads, state)
        except NonFiniteError as err:
            raise TrainingError("{} update failed: {}".format(name, err)) from err
    return float(loss)


def train(env: ProcessEnv,
          config: AgentConfig,
          rng: np.random.Generator,
          env_id: str = "",
          training_log: Optional[TrainingLog] = None,
          buffers: Optional[TrainingBuffers] = None,
          constraint_scales: Optional[Sequence[float]] = None,
          progress: bool = False,
          workers: int = 1,
          bundle: Optional[PolicyBundle] = None,
          resume_record: Optional[dict] = None) -> PolicyBundle:
    """
    Run the training loop.

    Each iteration collects ``episodes`` epsilon-greedy episodes, stores Q and oracle datapoints,
    takes ``gradient_steps`` Adam steps on every network and then decays epsilon and the
    training backoffs. The ``epsilon`` and ``backoffs`` of a log record are the values after
    that iteration's decay. Episodes whose integration fails are dropped and logged.

    A run is resumed by passing the saved ``bundle``, its ``buffers`` and the last log record
    as ``resume_record``; the remaining iterations up to ``config.iterations`` are then run
    with fresh Adam moments.

    :param env: process environment.
    :param config: agent hyperparameters.
    :param rng: master stream; every episode gets its own child seed.
    :param env_id: recorded in the bundle.
    :param training_log: optional record sink.
    :param buffers: existing buffers to resume from, filled in place.
    :param constraint_scales: penalty scales, defaults to the environment's.
    :param progress: show a tqdm bar.
    :param workers: rollout processes, 0 for one per core.
    :param bundle: networks to keep training instead of freshly initialised ones.
    :param resume_record: last record of the interrupted run (iteration, epsilon, backoffs).
    :return: trained bundle with nominal (zero) deployment backoffs.
    """
    spec = env.process_spec
    if len(config.initial_backoffs) != spec.n_g:
        raise ValueError("initial_backoffs has {} entries, environment has {} constraints".format(
            len(config.initial_backoffs), spec.n_g))
    if len(config.constraint_batch_sizes) != spec.n_g:
        raise ValueError("constraint_batch_sizes has {} entries, environment has {} constraints".format(
            len(config.constraint_batch_sizes), spec.n_g))

    if bundle is None:
        bundle = init_bundle(env, config, rng, env_id, constraint_scales)
    elif bundle.n_g != spec.n_g:
        raise ShapeError("bundle has {} constraint networks, environment has {} constraints".format(
            bundle.n_g, spec.n_g))
    if buffers is None:
        buffers = TrainingBuffers.empty(spec.n_g, config)
    elif len(buffers.constraints) != spec.n_g:
        raise ShapeError("buffers hold {} constraint buffers, environment has {} constraints".format(
            len(buffers.constraints), spec.n_g))
    q_state = AdamState.for_params(bundle.q_net.parameters(), lr=config.learning_rate)
    g_states = [AdamState.for_params(net.parameters(), lr=config.learning_rate) for net in bundle.constraint_nets]

    start = 0
    epsilon = config.epsilon
    backoffs = np.array(config.initial_backoffs, dtype=float)
    if resume_record is not None:
        start = int(resume_record["iteration"])
        epsilon = float(resume_record["epsilon"])
        backoffs = np.array(resume_record["backoffs"], dtype=float)
        log.info("resuming after iteration %d with %d Q datapoints", start, len(buffers.q))

    iterations = tqdm(range(start + 1, config.iterations + 1), desc="train", disable=not progress)
    with RolloutPool(env, workers) as pool:
        for iteration in iterations:
            seeds = [int(rng.integers(2 ** 31 - 1)) for _ in range(config.episodes)]
            results = pool.run(EpsilonGreedyPolicy(bundle, epsilon, config.es, backoffs), seeds)
            returns, violations, failed = [], [], 0
            for result in results:
                if result.error is not None:
                    log.warning("dropping episode: %s", result.error)
                    failed += 1
                    continue
                _store(result.trajectory, buffers, config)
                returns.append(result.trajectory.objective)
                violations.append(result.trajectory.violated)

            if len(buffers.q) == 0:
                raise TrainingError("no episode completed in iteration {}".format(iteration))
            q_loss = _fit(bundle.q_net, buffers.q, config.q_batch_size, q_state, config, rng, "Q")
            g_losses = [_fit(net, buffers.constraints[j], config.constraint_batch_sizes[j], g_states[j], config,
                             rng, "G_{}".format(j + 1))
                        for j, net in enumerate(bundle.constraint_nets)]

            epsilon *= config.epsilon_decay
            backoffs = backoffs * config.backoff_decay

            record = {
                "iteration": iteration,
                "q_loss": q_loss,
                "g_losses": g_losses,
                "epsilon": epsilon,
                "backoffs": backoffs.tolist(),
                "mean_return": float(np.mean(returns)) if returns else float("nan"),
                "violation_rate": float(np.mean(violations)) if violations else float("nan"),
                "failed_episodes": failed,
            }
            if training_log is not None:
                training_log.append(record)
            log.info("iteration %d: q_loss=%.4g g_losses=%s epsilon=%.4f mean_return=%.4g violation_rate=%.3f",
                     iteration, q_loss, ["{:.4g}".format(v) for v in g_losses], epsilon,
                     record["mean_return"], record["violation_rate"])
    return bundle


def _store(trajectory: Trajectory, buffers: TrainingBuffers, config: AgentConfig) -> None:
    buffers.q.extend(extract_q_targets(trajectory, config.gamma))
    for j, buffer in enumerate(buffers.constraints):
        buffer.extend(extract_oracle_targets(trajectory, j, config.oracle_include_current))
