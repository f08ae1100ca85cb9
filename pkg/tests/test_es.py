import numpy as np
import pytest

from ocql.errors import ShapeError
from ocql.es import EsConfig, maximize


def paraboloid(center):
    center = np.asarray(center, dtype=float)

    def fitness(population):
        return -np.sum((population - center) ** 2, axis=1)

    return fitness


def test_finds_interior_optimum():
    result = maximize(paraboloid([0.3, -0.2]), [-1.0, -1.0], [1.0, 1.0], EsConfig(), np.random.default_rng(0))
    np.testing.assert_allclose(result.x, [0.3, -0.2], atol=0.02)
    assert result.evaluations == 40 * 31
    assert len(result.best_history) == 31


def test_best_fitness_never_decreases():
    result = maximize(paraboloid([0.9]), [0.0], [1.0], EsConfig(generations=15), np.random.default_rng(1))
    assert np.all(np.diff(result.best_history) >= 0)


def test_optimum_outside_box_lands_on_boundary():
    result = maximize(paraboloid([5.0, 0.0]), [-1.0, -1.0], [1.0, 1.0], EsConfig(), np.random.default_rng(2))
    assert result.x[0] == pytest.approx(1.0, abs=1e-3)
    assert np.all(result.x <= 1.0) and np.all(result.x >= -1.0)


def test_same_seed_same_result():
    first = maximize(paraboloid([0.1]), [-1.0], [1.0], EsConfig(), np.random.default_rng(7))
    second = maximize(paraboloid([0.1]), [-1.0], [1.0], EsConfig(), np.random.default_rng(7))
    np.testing.assert_array_equal(first.x, second.x)


def test_warm_start_is_kept():
    config = EsConfig(generations=0)
    result = maximize(paraboloid([0.25]), [-1.0], [1.0], config, np.random.default_rng(3), initial=[0.25])
    assert result.x[0] == 0.25 and result.fitness == 0.0


def test_nan_fitness_never_selected():
    def fitness(population):
        scores = -np.abs(population[:, 0])
        return np.where(population[:, 0] < 0, np.nan, scores)

    result = maximize(fitness, [-1.0], [1.0], EsConfig(), np.random.default_rng(4))
    assert result.x[0] >= 0.0 and np.isfinite(result.fitness)


def test_shape_checks():
    with pytest.raises(ShapeError):
        maximize(paraboloid([0.0]), [0.0, 0.0], [1.0], EsConfig(), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        maximize(lambda p: np.zeros(3), [0.0], [1.0], EsConfig(), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        maximize(paraboloid([0.0]), [0.0], [1.0], EsConfig(), np.random.default_rng(0), initial=[0.0, 1.0])


def test_config_validation():
    with pytest.raises(ValueError):
        EsConfig(population=4, parents=5)
    with pytest.raises(ValueError):
        EsConfig(halve_every=0)
