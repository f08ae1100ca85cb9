"""
Feed-forward LeakyReLU networks with a linear scalar output, Huber loss, reverse-mode
gradients and Adam, all on numpy arrays.

Weights are stored as (fan_in, fan_out) matrices so that a batch of row inputs is
propagated with ``x @ W + b``. Inputs are standardised with constants held by the network
and the output is trained in standardised units, then mapped back in ``predict``.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple

import h5py
import numpy as np

from ocql.errors import NonFiniteError, ShapeError

log = logging.getLogger(__name__)

NETWORK_FORMAT = "ocql-mlp"
NETWORK_VERSION = 1


class Approximator(Protocol):
    def predict(self, inputs: np.ndarray) -> np.ndarray:
        ...


def leaky_relu(x, alpha: float = 0.01):
    return np.where(x > 0, x, alpha * x)


def leaky_relu_grad(x, alpha: float = 0.01):
    return np.where(x > 0, 1.0, alpha)


@dataclass
class MlpNetwork:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    alpha: float = 0.01
    input_mean: Optional[np.ndarray] = None
    input_std: Optional[np.ndarray] = None
    output_mean: float = 0.0
    output_std: float = 1.0
    normalized: bool = False

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ShapeError("bias {} has shape {}, expected ({},)".format(k, b.shape, w.shape[1]))
            if k > 0 and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ShapeError("layer {} expects {} inputs, previous layer gives {}".format(
                    k, w.shape[0], self.weights[k - 1].shape[1]))
        if self.weights[-1].shape[1] != 1:
            raise ShapeError("output layer must have a single unit")
        n_in = self.weights[0].shape[0]
        if self.input_mean is None:
            self.input_mean = np.zeros(n_in)
        if self.input_std is None:
            self.input_std = np.ones(n_in)

    @property
    def layer_sizes(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    def parameters(self) -> List[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params += [w, b]
        return params

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(weights=[w.copy() for w in self.weights],
                          biases=[b.copy() for b in self.biases],
                          alpha=self.alpha,
                          input_mean=self.input_mean.copy(),
                          input_std=self.input_std.copy(),
                          output_mean=self.output_mean,
                          output_std=self.output_std,
                          normalized=self.normalized)

    def predict(self, inputs) -> np.ndarray:
        """
        Vectorised evaluation in target units.
        :param inputs: batch of shape (B, n_in).
        :return: outputs of shape (B,).
        """
        inputs = _check_inputs(self, inputs)
        activations, _ = _propagate(self, inputs)
        return self.output_mean + self.output_std * activations[-1][:, 0]

    def set_normalization(self, inputs, targets) -> None:
        """Standardisation constants of a data set; they stay fixed until the next call and are saved with the weights."""
        inputs = np.asarray(inputs, dtype=float)
        targets = np.asarray(targets, dtype=float)
        std = inputs.std(axis=0)
        self.input_mean = inputs.mean(axis=0)
        self.input_std = np.where(std > 1e-8, std, 1.0)
        target_std = float(targets.std())
        self.output_mean = float(targets.mean())
        self.output_std = target_std if target_std > 1e-8 else 1.0
        self.normalized = True


def init_network(layer_sizes: Sequence[int], rng: np.random.Generator, alpha: float = 0.01) -> MlpNetwork:
    """
    Uniform fan-in initialisation, W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
    """
    if len(layer_sizes) < 2 or layer_sizes[-1] != 1:
        raise ShapeError("layer sizes must go from the input size to a single output, got {}".format(layer_sizes))
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpNetwork(weights=weights, biases=biases, alpha=alpha)


def _check_inputs(net: MlpNetwork, inputs) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != net.n_inputs:
        raise ShapeError("network expects inputs of shape (B, {}), got {}".format(net.n_inputs, inputs.shape))
    return inputs


def _propagate(net: MlpNetwork, inputs: np.ndarray):
    # returns post-activations (input included) and pre-activations, output in standardised units
    a = (inputs - net.input_mean) / net.input_std
    activations, pre_activations = [a], []
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        pre_activations.append(z)
        a = z if k == last else leaky_relu(z, net.alpha)
        activations.append(a)
    return activations, pre_activations


def forward(net: MlpNetwork, x) -> float:
    """Scalar output of the network for one input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.n_inputs,):
        raise ShapeError("network expects an input of length {}, got shape {}".format(net.n_inputs, x.shape))
    return float(net.predict(x[None])[0])


def huber_loss(prediction, target, delta: float = 1.0):
    """
    Huber loss and its derivative with respect to the prediction, elementwise.
    :return: (loss, dloss/dprediction).
    """
    if delta <= 0:
        raise ValueError("delta must be positive, got {}".format(delta))
    error = np.asarray(prediction, dtype=float) - np.asarray(target, dtype=float)
    abs_error = np.abs(error)
    quadratic = abs_error <= delta
    loss = np.where(quadratic, 0.5 * error ** 2, delta * (abs_error - 0.5 * delta))
    grad = np.clip(error, -delta, delta)
    if np.ndim(loss) == 0:
        return float(loss), float(grad)
    return loss, grad


def backward(net: MlpNetwork, inputs, targets, delta: float = 1.0) -> Tuple[float, List[np.ndarray]]:
    """
    Mean Huber loss over a minibatch and its gradient with respect to ``net.parameters()``.
    Targets are compared in the network's standardised output units.
    :param inputs: (B, n_in).
    :param targets: (B,).
    :return: (loss, grads) with grads ordered like ``net.parameters()``.
    """
    inputs = _check_inputs(net, inputs)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    batch_size = inputs.shape[0]
    if batch_size == 0:
        raise ShapeError("empty minibatch")
    if targets.shape[0] != batch_size:
        raise ShapeError("got {} targets for {} inputs".format(targets.shape[0], batch_size))

    activations, pre_activations = _propagate(net, inputs)
    scaled_targets = (targets - net.output_mean) / net.output_std
    losses, dloss = huber_loss(activations[-1][:, 0], scaled_targets, delta)

    grads = [None] * (2 * len(net.weights))
    d = (dloss / batch_size)[:, None]
    for k in reversed(range(len(net.weights))):
        grads[2 * k] = activations[k].T @ d
        grads[2 * k + 1] = d.sum(axis=0)
        if k > 0:
            d = (d @ net.weights[k].T) * leaky_relu_grad(pre_activations[k - 1], net.alpha)
    return float(losses.mean()), grads


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """
    Bias-corrected Adam step applied in place to ``params``.
    The whole update is rejected if any gradient is non-finite.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("parameter, gradient and moment lists differ in length")
    for p, g, m in zip(params, grads, state.m):
        if np.shape(g) != p.shape or m.shape != p.shape:
            raise ShapeError("gradient shape {} does not match parameter shape {}".format(np.shape(g), p.shape))
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient, Adam update rejected at step {}".format(state.step))

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g ** 2
        p -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return state


def adam_step(net: MlpNetwork, grads: Sequence[np.ndarray], state: AdamState) -> Tuple[MlpNetwork, AdamState]:
    adam_update(net.parameters(), grads, state)
    if not all(np.all(np.isfinite(p)) for p in net.parameters()):
        raise NonFiniteError("network parameters became non-finite at Adam step {}".format(state.step))
    return net, state


def save_network(net: MlpNetwork, path: str) -> None:
    with h5py.File(path, 'w') as net_file:
        write_network(net_file, net)


def load_network(path: str) -> MlpNetwork:
    with h5py.File(path, 'r') as net_file:
        net = read_network(net_file)
    log.debug("loaded %s network from %s", net.layer_sizes, path)
    return net


def write_network(group: h5py.Group, net: MlpNetwork) -> None:
    group.attrs["format"] = NETWORK_FORMAT
    group.attrs["version"] = NETWORK_VERSION
    group.attrs["layer_sizes"] = np.array(net.layer_sizes, dtype=np.int64)
    group.attrs["alpha"] = net.alpha
    group.attrs["output_mean"] = net.output_mean
    group.attrs["output_std"] = net.output_std
    group.attrs["normalized"] = net.normalized
    group["input_mean"] = net.input_mean
    group["input_std"] = net.input_std
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        group["W_{}".format(k)] = w
        group["b_{}".format(k)] = b


def read_network(group: h5py.Group) -> MlpNetwork:
    if group.attrs.get("format") != NETWORK_FORMAT:
        raise ValueError("not an {} network file".format(NETWORK_FORMAT))
    version = int(group.attrs["version"])
    if version != NETWORK_VERSION:
        raise ValueError("unsupported network version {}".format(version))
    n_layers = len(group.attrs["layer_sizes"]) - 1
    return MlpNetwork(weights=[group["W_{}".format(k)][()] for k in range(n_layers)],
                      biases=[group["b_{}".format(k)][()] for k in range(n_layers)],
                      alpha=float(group.attrs["alpha"]),
                      input_mean=group["input_mean"][()],
                      input_std=group["input_std"][()],
                      output_mean=float(group.attrs["output_mean"]),
                      output_std=float(group.attrs["output_std"]),
                      normalized=bool(group.attrs["normalized"]))
