import numpy as np
import pytest

from ocql.errors import DegenerateStateError, IntegrationError
from ocql.util import clip_to_box, in_box, rk4_step


def decay(x, u, p):
    return -x


def test_clip_to_box_batch():
    low, high = np.array([0.0, -1.0]), np.array([1.0, 1.0])
    x = np.array([[2.0, -3.0], [0.5, 0.2]])
    np.testing.assert_array_equal(clip_to_box(x, low, high), [[1.0, -1.0], [0.5, 0.2]])


def test_in_box_tolerance():
    assert in_box([1.0 + 1e-12], [0.0], [1.0])
    assert not in_box([1.1], [0.0], [1.0])


def test_rk4_matches_exponential_decay():
    x = rk4_step(decay, np.array([1.0]), np.empty(0), np.empty(0), dt=1.0, substeps=100)
    assert abs(x[0] - np.exp(-1.0)) < 1e-6


def test_rk4_batch_keeps_shape():
    states = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    x = rk4_step(decay, states, np.zeros((3, 1)), np.empty(0), dt=0.5, substeps=10)
    assert x.shape == (3, 2)
    np.testing.assert_allclose(x, states * np.exp(-0.5), rtol=1e-7)


def test_rk4_rejects_bad_step():
    with pytest.raises(ValueError):
        rk4_step(decay, np.array([1.0]), None, None, dt=0.0)
    with pytest.raises(ValueError):
        rk4_step(decay, np.array([1.0]), None, None, dt=1.0, substeps=0)


def test_rk4_reports_non_finite_rate_with_time():
    def blow_up(x, u, p):
        return np.array([np.inf])

    with pytest.raises(IntegrationError) as info:
        rk4_step(blow_up, np.array([1.0]), None, None, dt=1.0, t0=40.0)
    assert info.value.time == 40.0


def test_rk4_attaches_time_to_degenerate_state():
    def guarded(x, u, p):
        if x[0] < 0.5:
            raise DegenerateStateError("x left the domain", time=np.nan)
        return -np.ones_like(x)

    with pytest.raises(DegenerateStateError) as info:
        rk4_step(guarded, np.array([1.0]), None, None, dt=1.0, substeps=4, t0=10.0)
    assert 10.0 < info.value.time <= 11.0
