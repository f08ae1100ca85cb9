import logging
from typing import Generic, List, NamedTuple, Sequence, Tuple, TypeVar

import h5py
import numpy as np

from ocql.core import Trajectory

log = logging.getLogger(__name__)

T = TypeVar("T")


class QDatapoint(NamedTuple):
    state: np.ndarray
    time_index: int
    control: np.ndarray
    q_value: float

    def features(self) -> np.ndarray:
        return np.concatenate([self.state, [self.time_index], self.control])


class ConstraintDatapoint(NamedTuple):
    state: np.ndarray
    time_to_termination: int
    control: np.ndarray
    oracle_value: float

    def features(self) -> np.ndarray:
        return np.concatenate([self.state, [self.time_to_termination], self.control])


class RingBuffer(Generic[T]):
    def __init__(self, capacity: int):
        """
        Fixed-size FIFO store; once full, each push overwrites the oldest item.
        :param capacity: maximum number of stored datapoints.
        """
        if capacity < 1:
            raise ValueError("capacity must be >= 1, got {}".format(capacity))
        self.capacity = capacity
        self._items: List[T] = []
        self._cursor = 0

    def __len__(self):
        return len(self._items)

    def push(self, item: T) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._cursor] = item
        self._cursor = (self._cursor + 1) % self.capacity

    def extend(self, items: Sequence[T]) -> None:
        for item in items:
            self.push(item)

    def contents(self) -> List[T]:
        """Stored items from oldest to newest."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._cursor:] + self._items[:self._cursor]

    def sample_minibatch(self, k: int, rng: np.random.Generator) -> List[T]:
        """
        Uniform minibatch, with replacement when the buffer holds fewer than k items.
        """
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        if k < 1:
            raise ValueError("minibatch size must be >= 1, got {}".format(k))
        replace = len(self._items) < k
        index = rng.choice(len(self._items), size=k, replace=replace)
        items = self.contents()
        return [items[i] for i in index]


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    """q_t = sum_{t' >= t} gamma^(t' - t) r_t'."""
    returns = np.zeros(len(rewards))
    running = 0.0
    for t in reversed(range(len(rewards))):
        running = rewards[t] + gamma * running
        returns[t] = running
    return returns


def suffix_max(values, include_current: bool = True) -> np.ndarray:
    """
    Running maximum from the end: out[t] = max(values[t:]).
    With ``include_current=False`` out[t] = max(values[t + 1:]) and the last entry is dropped.
    """
    values = np.asarray(values, dtype=float)
    maxima = np.maximum.accumulate(values[::-1])[::-1]
    return maxima if include_current else maxima[1:]


def extract_q_targets(trajectory: Trajectory, gamma: float = 1.0) -> List[QDatapoint]:
    returns = discounted_returns(trajectory.rewards, gamma)
    return [QDatapoint(trajectory.states[t], t, trajectory.controls[t], float(returns[t]))
            for t in range(trajectory.t_f)]


def extract_oracle_targets(trajectory: Trajectory, j: int,
                           include_current: bool = False) -> List[ConstraintDatapoint]:
    """
    Constraint datapoints for constraint ``j``. The value attached to (x_t, u_t) is the worst
    violation over the states reached after acting, max_{t' >= t+1} g_j(x_t'); with
    ``include_current`` the maximum also covers x_t itself.
    """
    g = trajectory.constraint_values[:, j]
    t_f = trajectory.t_f
    oracle = suffix_max(g, include_current=include_current)
    return [ConstraintDatapoint(trajectory.states[t], t_f - t, trajectory.controls[t], float(oracle[t]))
            for t in range(t_f)]


def to_arrays(datapoints: Sequence) -> Tuple[np.ndarray, np.ndarray]:
    """Stack datapoints into a network input matrix and a target vector."""
    inputs = np.array([d.features() for d in datapoints], dtype=float)
    targets = np.array([d[-1] for d in datapoints], dtype=float)
    return inputs, targets


def _write_buffer(group: h5py.Group, buffer: RingBuffer) -> None:
    items = buffer.contents()
    group.attrs["capacity"] = buffer.capacity
    group.attrs["size"] = len(items)
    if items:
        group["states"] = np.array([d[0] for d in items])
        group["times"] = np.array([d[1] for d in items], dtype=np.int64)
        group["controls"] = np.array([d[2] for d in items])
        group["targets"] = np.array([d[3] for d in items])


def _read_buffer(group: h5py.Group, datapoint_type) -> RingBuffer:
    buffer = RingBuffer(int(group.attrs["capacity"]))
    if int(group.attrs["size"]) > 0:
        states, times = group["states"][()], group["times"][()]
        controls, targets = group["controls"][()], group["targets"][()]
        for i in range(states.shape[0]):
            buffer.push(datapoint_type(states[i], int(times[i]), controls[i], float(targets[i])))
    return buffer


def dump_buffers(path: str, q_buffer: RingBuffer, constraint_buffers: Sequence[RingBuffer]) -> None:
    with h5py.File(path, 'w') as buffer_file:
        _write_buffer(buffer_file.create_group("q"), q_buffer)
        for j, buffer in enumerate(constraint_buffers):
            _write_buffer(buffer_file.create_group("g_{}".format(j)), buffer)
        buffer_file.attrs["n_g"] = len(constraint_buffers)


def load_buffers(path: str) -> Tuple[RingBuffer, List[RingBuffer]]:
    with h5py.File(path, 'r') as buffer_file:
        q_buffer = _read_buffer(buffer_file["q"], QDatapoint)
        n_g = int(buffer_file.attrs["n_g"])
        constraint_buffers = [_read_buffer(buffer_file["g_{}".format(j)], ConstraintDatapoint) for j in range(n_g)]
    log.info("loaded %d Q datapoints and %d constraint buffers from %s", len(q_buffer), n_g, path)
    return q_buffer, constraint_buffers
