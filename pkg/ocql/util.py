from typing import Callable

import numpy as np

from ocql.errors import DegenerateStateError, IntegrationError

Derivative = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def clip_to_box(x, low, high):
    """Bound ``x`` componentwise so that low <= x <= high.

    Args:
        x: a vector, or a batch of vectors along the leading axis
        low: lower corner of the box
        high: upper corner of the box

    Returns:
        x: clipped copy
    """
    return np.minimum(np.maximum(x, low), high)


def in_box(x, low, high, atol=1e-9):
    x = np.asarray(x, dtype=float)
    return bool(np.all(x >= np.asarray(low) - atol) and np.all(x <= np.asarray(high) + atol))


def rk4_step(derivative: Derivative,
             state,
             control,
             params,
             dt: float,
             substeps: int = 1,
             t0: float = 0.0):
    """
    Advance an autonomous ODE with classical 4-th order Runge-Kutta over ``dt``,
    holding control and parameters constant, using ``substeps`` equal internal steps.

    ``state`` may be a single vector of shape (n_x,) or a batch of shape (P, n_x); in the
    batch case ``control`` is (n_u,) or (P, n_u) and the derivative must broadcast.

    Args:
        derivative: rate function ``dx = derivative(x, u, p)``
        state: initial state
        control: control held over the interval
        params: model parameters
        dt: interval length, > 0
        substeps: number of internal steps, >= 1
        t0: absolute time of ``state``, only used to report failures

    Example ::
        ### exponential decay, exact value exp(-1)
        def decay(x, u, p):
            return -x
        rk4_step(decay, np.array([1.0]), np.empty(0), np.empty(0), dt=1.0, substeps=100)

    Returns:
        state after ``dt``
    """
    if dt <= 0:
        raise ValueError("dt must be positive, got {}".format(dt))
    if substeps < 1:
        raise ValueError("substeps must be >= 1, got {}".format(substeps))

    y = np.array(state, dtype=float)
    h = dt / substeps
    h2 = h / 2.0
    for i in range(substeps):
        time = t0 + i * h
        k1 = _rate(derivative, y, control, params, time)
        k2 = _rate(derivative, y + h2 * k1, control, params, time + h2)
        k3 = _rate(derivative, y + h2 * k2, control, params, time + h2)
        k4 = _rate(derivative, y + h * k3, control, params, time + h)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def _rate(derivative, y, control, params, time):
    try:
        rate = np.asarray(derivative(y, control, params), dtype=float)
    except DegenerateStateError as err:
        raise DegenerateStateError(err.args[0], time=time) from err
    if not np.all(np.isfinite(rate)):
        raise IntegrationError("non-finite derivative evaluation", time=time)
    return rate
