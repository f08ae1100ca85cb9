"""
(mu + lambda) evolution strategy over a box, shared by the agent's control selection
and the NMPC baseline.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from ocql.errors import ShapeError
from ocql.util import clip_to_box

log = logging.getLogger(__name__)

# maps a (P, d) population to a (P,) fitness vector, larger is better
BatchFitness = Callable[[np.ndarray], np.ndarray]


@dataclass
class EsConfig:
    population: int = 40
    parents: int = 8
    generations: int = 30
    sigma_fraction: float = 0.1
    halve_every: int = 10

    def __post_init__(self):
        if self.population < 1 or self.parents < 1 or self.parents > self.population:
            raise ValueError("need 1 <= parents <= population, got {} / {}".format(self.parents, self.population))
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.sigma_fraction <= 0:
            raise ValueError("sigma_fraction must be positive")
        if self.halve_every < 1:
            raise ValueError("halve_every must be >= 1")


@dataclass
class EsResult:
    x: np.ndarray
    fitness: float
    best_history: List[float] = field(default_factory=list)
    evaluations: int = 0


def _select(candidates: np.ndarray, scores: np.ndarray, n: int):
    # stable sort keeps the lowest index first among equal scores
    order = np.argsort(-scores, kind="stable")[:n]
    return candidates[order], scores[order]


def maximize(fitness: BatchFitness,
             low,
             high,
             config: EsConfig,
             rng: np.random.Generator,
             initial: Optional[np.ndarray] = None) -> EsResult:
    """
    Maximise ``fitness`` over the box [low, high].

    Mutants are clipped back into the box, so every evaluated point is feasible for the box.
    The mutation step is ``sigma_fraction`` of each coordinate's range and halves every
    ``halve_every`` generations.

    :param fitness: batch fitness function.
    :param low: lower box corner, shape (d,).
    :param high: upper box corner, shape (d,).
    :param config: population sizes and schedule.
    :param rng: random stream, the result is deterministic given its state.
    :param initial: optional warm start, inserted as the first member of the initial population.
    :return: best point found and its fitness.
    """
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    if low.shape != high.shape or low.ndim != 1:
        raise ShapeError("box corners must be vectors of equal length, got {} / {}".format(low.shape, high.shape))
    span = high - low
    dim = low.shape[0]

    population = rng.uniform(low, high, size=(config.population, dim))
    if initial is not None:
        initial = np.asarray(initial, dtype=float).reshape(-1)
        if initial.shape != (dim,):
            raise ShapeError("warm start has shape {}, expected ({},)".format(initial.shape, dim))
        population[0] = clip_to_box(initial, low, high)
    scores = _evaluate(fitness, population)
    evaluations = config.population
    parents, parent_scores = _select(population, scores, config.parents)
    history = [float(parent_scores[0])]

    sigma = config.sigma_fraction * span
    for generation in range(config.generations):
        if generation > 0 and generation % config.halve_every == 0:
            sigma = sigma / 2.0
        picks = rng.integers(0, config.parents, size=config.population)
        offspring = parents[picks] + rng.normal(size=(config.population, dim)) * sigma
        offspring = clip_to_box(offspring, low, high)
        offspring_scores = _evaluate(fitness, offspring)
        evaluations += config.population
        parents, parent_scores = _select(np.vstack([parents, offspring]),
                                         np.concatenate([parent_scores, offspring_scores]),
                                         config.parents)
        history.append(float(parent_scores[0]))

    if not np.isfinite(parent_scores[0]):
        log.debug("no finite fitness among %d evaluations", evaluations)
    return EsResult(x=parents[0].copy(), fitness=float(parent_scores[0]),
                    best_history=history, evaluations=evaluations)


def _evaluate(fitness: BatchFitness, population: np.ndarray) -> np.ndarray:
    scores = np.asarray(fitness(population), dtype=float).reshape(-1)
    if scores.shape[0] != population.shape[0]:
        raise ShapeError("fitness returned {} values for {} candidates".format(scores.shape[0], population.shape[0]))
    # NaN fitness never wins a selection
    return np.where(np.isnan(scores), -np.inf, scores)
