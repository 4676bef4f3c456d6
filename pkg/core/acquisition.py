"""
Acquisition module.

UCB acquisition over a GP or multi-output GP and its maximization by a
hybrid differential evolution: DE/rand/1/bin offspring, a top-kappa archive
refined by projected gradient ascent, and elitist truncation. kappa adapts:
it shrinks when the local search stops moving points and grows otherwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Protocol, Tuple

import numpy as np
from scipy.stats import qmc

from .errors import InputError

logger = logging.getLogger(__name__)

# Floor on the predictive standard deviation when differentiating sqrt(variance)
SIGMA_FLOOR = 1e-8


class Surrogate(Protocol):
    """What the acquisition needs from a fitted model (GPModel or MOGPModel)."""

    def predict(self, Z, task: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]: ...

    def predict_grad(self, z, task: Optional[int] = None) -> Tuple[float, float, np.ndarray, np.ndarray]: ...


class AcqOptimizerKind(str, Enum):
    """Acquisition optimizer used by the main loop."""

    HYBRID = "hybrid"
    DE_ONLY = "de_only"
    ASCENT_ONLY = "ascent_only"


@dataclass(frozen=True)
class AscentSettings:
    """Projected gradient ascent limits; step_tol is relative to the search range R."""

    max_iter: int = 20
    step_tol: float = 1e-6
    initial_step: float = 0.1


@dataclass(frozen=True)
class AcqConfig:
    """
    Settings of the UCB acquisition and its hybrid DE optimizer.

    Attributes:
        omega: UCB exploration weight
        pop_size: DE population size N
        F: DE scale factor
        CR: Binomial crossover rate
        kappa_init: Initial size of the local-search archive
        eps_d: Closeness threshold on normalized coordinates
        generations: Number of DE generations
    """

    omega: float = 2.0
    pop_size: int = 30
    F: float = 0.5
    CR: float = 0.9
    kappa_init: int = 5
    eps_d: float = 0.01
    generations: int = 50
    ascent: AscentSettings = field(default_factory=AscentSettings)

    def __post_init__(self):
        if self.pop_size < 4:
            raise InputError(f"DE needs a population of at least 4, got {self.pop_size}")
        if not 0.0 <= self.CR <= 1.0:
            raise InputError(f"crossover rate must be in [0, 1], got {self.CR}")
        if not 1 <= self.kappa_init <= 2 * self.pop_size:
            raise InputError(f"kappa_init must be in [1, {2 * self.pop_size}], got {self.kappa_init}")
        if self.omega < 0.0:
            raise InputError(f"omega must be non-negative, got {self.omega}")


def _predict(model: Surrogate, Z: np.ndarray, task: Optional[int]):
    return model.predict(Z, task) if task is not None else model.predict(Z)


def _predict_grad(model: Surrogate, z: np.ndarray, task: Optional[int]):
    return model.predict_grad(z, task) if task is not None else model.predict_grad(z)


def ucb_batch(model: Surrogate, Z: np.ndarray, task: Optional[int], omega: float) -> np.ndarray:
    """UCB at every row of Z."""
    mean, var = _predict(model, np.asarray(Z, dtype=float), task)
    return mean + omega * np.sqrt(var)


def ucb(model: Surrogate, z, task: Optional[int], omega: float) -> float:
    """Upper confidence bound mu(z) + omega * sigma(z)."""
    return float(ucb_batch(model, np.array(z, dtype=float, ndmin=2), task, omega)[0])


def ucb_value_and_grad(model: Surrogate, z, task: Optional[int], omega: float) -> Tuple[float, np.ndarray]:
    """UCB and its gradient at a single point."""
    mean, var, dmean, dvar = _predict_grad(model, np.asarray(z, dtype=float).ravel(), task)
    sigma = np.sqrt(var)
    return mean + omega * sigma, dmean + omega * dvar / (2.0 * max(sigma, SIGMA_FLOOR))


def ucb_grad(model: Surrogate, z, task: Optional[int], omega: float) -> np.ndarray:
    """
    Gradient of the UCB: grad mu + omega * grad var / (2 * max(sigma, 1e-8)).
    """
    return ucb_value_and_grad(model, z, task, omega)[1]


def lhs_sample(count: int, bounds: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Latin hypercube sample of count points in the box.

    Every dimension's count equal-width strata hold exactly one point.
    """
    if count < 1:
        raise InputError(f"sample size must be >= 1, got {count}")
    bounds = np.asarray(bounds, dtype=float)
    sampler = qmc.LatinHypercube(d=bounds.shape[0], seed=rng)
    unit = sampler.random(count)
    return bounds[:, 0] + unit * (bounds[:, 1] - bounds[:, 0])


def de_step(population: np.ndarray, F: float, CR: float, bounds: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    DE/rand/1/bin offspring, one trial per member.

    Mutant v = x_r1 + F * (x_r2 - x_r3) with r1, r2, r3 distinct and different
    from the parent; binomial crossover keeps at least coordinate j_rand from
    the mutant; trials are clamped to the bounds.
    """
    population = np.asarray(population, dtype=float)
    size, dim = population.shape
    if size < 4:
        raise InputError(f"DE needs a population of at least 4, got {size}")
    bounds = np.asarray(bounds, dtype=float)
    trials = np.empty_like(population)
    for i in range(size):
        others = np.delete(np.arange(size), i)
        r1, r2, r3 = rng.choice(others, size=3, replace=False)
        mutant = population[r1] + F * (population[r2] - population[r3])
        cross = rng.random(dim) < CR
        cross[rng.integers(dim)] = True
        trials[i] = np.where(cross, mutant, population[i])
    return np.clip(trials, bounds[:, 0], bounds[:, 1])


@dataclass
class AscentResult:
    """Outcome of a local ascent; values holds the accepted objective values in order."""

    x: np.ndarray
    value: float
    values: List[float]


def local_ascent(
    x0,
    objective_and_grad: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    bounds: np.ndarray,
    settings: Optional[AscentSettings] = None,
) -> AscentResult:
    """
    Projected gradient ascent with backtracking.

    Only improving steps are accepted, so the returned value is never below the
    starting value. The step size doubles after an accepted step and halves on
    rejection; the search stops after max_iter accepted steps or when the trial
    step is shorter than step_tol * R.
    """
    settings = settings or AscentSettings()
    bounds = np.asarray(bounds, dtype=float)
    R = float(np.max(bounds[:, 1] - bounds[:, 0]))
    min_step = settings.step_tol * R
    x = np.clip(np.asarray(x0, dtype=float), bounds[:, 0], bounds[:, 1])
    value, grad = objective_and_grad(x)
    values = [value]
    norm = float(np.linalg.norm(grad))
    if norm == 0.0:
        return AscentResult(x=x, value=value, values=values)
    rate = settings.initial_step * R / norm

    for _ in range(settings.max_iter):
        while True:
            trial = np.clip(x + rate * grad, bounds[:, 0], bounds[:, 1])
            step = float(np.linalg.norm(trial - x))
            if step < min_step:
                return AscentResult(x=x, value=value, values=values)
            trial_value, trial_grad = objective_and_grad(trial)
            if trial_value > value:
                break
            rate *= 0.5
        x, value, grad = trial, trial_value, trial_grad
        values.append(value)
        rate *= 2.0
    return AscentResult(x=x, value=value, values=values)


@dataclass
class AcquisitionTrace:
    """Diagnostics of one acquisition optimization."""

    best_per_generation: List[float] = field(default_factory=list)
    kappa_history: List[int] = field(default_factory=list)


def _truncate(pool: np.ndarray, scores: np.ndarray, size: int) -> Tuple[np.ndarray, np.ndarray]:
    order = np.argsort(-scores, kind="stable")[:size]
    return pool[order], scores[order]


def optimize_acquisition(
    model: Surrogate,
    task: Optional[int],
    cfg: AcqConfig,
    bounds: np.ndarray,
    rng: np.random.Generator,
    kind: AcqOptimizerKind = AcqOptimizerKind.HYBRID,
    trace: Optional[AcquisitionTrace] = None,
) -> np.ndarray:
    """
    Maximize the UCB over the box.

    HYBRID runs the six-step DE with adaptive local search; DE_ONLY drops the
    local search; ASCENT_ONLY runs the local ascent from every initial sample.

    Args:
        model: Fitted surrogate
        task: Task to predict for (None for single-output models)
        cfg: Acquisition settings
        bounds: Search box, one (lower, upper) row per dimension
        rng: Random generator
        kind: Optimizer variant
        trace: Optional container filled with per-generation diagnostics

    Returns:
        The final population member with the highest UCB
    """
    kind = AcqOptimizerKind(kind)
    bounds = np.asarray(bounds, dtype=float)
    width = bounds[:, 1] - bounds[:, 0]
    N = cfg.pop_size

    def score(Z):
        return ucb_batch(model, Z, task, cfg.omega)

    def value_and_grad(z):
        return ucb_value_and_grad(model, z, task, cfg.omega)

    population = lhs_sample(N, bounds, rng)
    scores = score(population)

    if kind is AcqOptimizerKind.ASCENT_ONLY:
        for i in range(N):
            result = local_ascent(population[i], value_and_grad, bounds, cfg.ascent)
            population[i], scores[i] = result.x, result.value
        return population[int(np.argmax(scores))].copy()

    kappa = cfg.kappa_init
    for _ in range(cfg.generations):
        offspring = de_step(population, cfg.F, cfg.CR, bounds, rng)
        pool = np.vstack([population, offspring])
        pool_scores = np.concatenate([scores, score(offspring)])
        if kind is AcqOptimizerKind.HYBRID:
            archive = np.argsort(-pool_scores, kind="stable")[:kappa]
            for idx in archive:
                result = local_ascent(pool[idx], value_and_grad, bounds, cfg.ascent)
                moved = float(np.linalg.norm((result.x - pool[idx]) / width))
                pool[idx], pool_scores[idx] = result.x, result.value
                kappa = max(kappa - 1, 1) if moved < cfg.eps_d else min(kappa + 1, 2 * N)
        population, scores = _truncate(pool, pool_scores, N)
        if trace is not None:
            trace.best_per_generation.append(float(scores[0]))
            trace.kappa_history.append(kappa)
    logger.debug("acquisition done: best UCB %.6g, kappa %d", float(np.max(scores)), kappa)
    return population[int(np.argmax(scores))].copy()
