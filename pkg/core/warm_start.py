"""
Warm-start initialization module.

For every selected source step, the local maxima of its GP posterior mean are
located by bounded gradient ascent (the gradient is (dk*/dx)^T K^-1 f), sorted
by predicted value and thinned so that kept points are at least eps_l apart.
The survivors form a pseudo-labelled dataset tagged with the source step;
no objective evaluations are spent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .errors import InputError
from .gp import Dataset, GPModel

logger = logging.getLogger(__name__)

Candidate = Tuple[np.ndarray, float]


@dataclass(frozen=True)
class WarmStartConfig:
    """
    Settings of the warm-start initialization.

    Attributes:
        sigma: Maximum number of points kept per source
        eps_l: Minimum distance between kept points; None means 1e-2 * R
        random_starts_per_dim: Uniform random ascent starts per dimension (plus all training inputs)
        max_iter: Iteration limit of each ascent
        grad_tol: Stationarity tolerance in units of gamma / R
    """

    sigma: int = 5
    eps_l: Optional[float] = None
    random_starts_per_dim: int = 10
    max_iter: int = 200
    grad_tol: float = 1e-5

    def __post_init__(self):
        if self.sigma < 1:
            raise InputError(f"sigma must be >= 1, got {self.sigma}")
        if self.eps_l is not None and self.eps_l <= 0.0:
            raise InputError(f"eps_l must be positive, got {self.eps_l}")

    def diversity_threshold(self, bounds: np.ndarray) -> float:
        if self.eps_l is not None:
            return self.eps_l
        return 1e-2 * float(np.max(bounds[:, 1] - bounds[:, 0]))


def projected_gradient(x: np.ndarray, grad: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Ascent gradient with components pushing out of an active bound zeroed."""
    g = grad.copy()
    g[(x <= bounds[:, 0]) & (g < 0.0)] = 0.0
    g[(x >= bounds[:, 1]) & (g > 0.0)] = 0.0
    return g


def extract_local_optima(
    model: GPModel, cfg: WarmStartConfig, bounds: np.ndarray, rng: np.random.Generator
) -> List[Candidate]:
    """
    Locate local maxima of the posterior mean.

    Ascents start from every training input and from 10 * n uniform points.
    Converged points (projected gradient inf-norm <= grad_tol * gamma / R)
    are kept; points within eps_l of a better point are dropped.

    Returns:
        List of (x, posterior mean) sorted by decreasing value
    """
    bounds = np.asarray(bounds, dtype=float)
    R = float(np.max(bounds[:, 1] - bounds[:, 0]))
    tol = cfg.grad_tol * model.params.gamma / R
    eps_l = cfg.diversity_threshold(bounds)
    n = model.dim

    starts = np.vstack(
        [model.data.X, rng.uniform(bounds[:, 0], bounds[:, 1], size=(cfg.random_starts_per_dim * n, n))]
    )

    def negated_mean(x):
        mean, _, grad, _ = model.predict_grad(x)
        return -mean, -grad

    found: List[Candidate] = []
    for start in starts:
        result = minimize(
            negated_mean,
            np.clip(start, bounds[:, 0], bounds[:, 1]),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": cfg.max_iter, "gtol": tol, "ftol": 0.0},
        )
        x = np.clip(result.x, bounds[:, 0], bounds[:, 1])
        mean, _, grad, _ = model.predict_grad(x)
        if np.max(np.abs(projected_gradient(x, grad, bounds))) <= tol:
            found.append((x, mean))

    found.sort(key=lambda c: -c[1])
    optima: List[Candidate] = []
    for x, value in found:
        if all(np.linalg.norm(x - kept) >= eps_l for kept, _ in optima):
            optima.append((x, value))
    return optima


def diversity_filter(candidates: Sequence[Candidate], sigma: int, eps_l: float) -> List[Candidate]:
    """
    Greedy thinning of value-sorted candidates.

    A candidate is kept iff it is at least eps_l away from every kept point;
    scanning stops once sigma points are kept.
    """
    kept: List[Candidate] = []
    for x, value in candidates:
        if len(kept) >= sigma:
            break
        if all(np.linalg.norm(np.asarray(x) - np.asarray(other)) >= eps_l for other, _ in kept):
            kept.append((np.asarray(x, dtype=float), float(value)))
    return kept


def build_augmented(
    source_models: Sequence[Tuple[int, GPModel]],
    cfg: WarmStartConfig,
    bounds: np.ndarray,
    rng: np.random.Generator,
) -> List[Dataset]:
    """
    Build one pseudo-labelled dataset per source.

    Args:
        source_models: Pairs of (source step, GP fitted on that step)
        cfg: Warm-start settings
        bounds: Search box, one (lower, upper) row per dimension
        rng: Random generator for the random ascent starts

    Returns:
        Datasets with pseudo=True tagged with their source step, in the given order
    """
    bounds = np.asarray(bounds, dtype=float)
    eps_l = cfg.diversity_threshold(bounds)
    augmented = []
    for t, model in source_models:
        optima = extract_local_optima(model, cfg, bounds, rng)
        kept = diversity_filter(optima, cfg.sigma, eps_l)
        if not kept:
            # no ascent converged; fall back to the source's incumbent
            x, _ = model.data.best()
            kept = [(x, 0.0)]
        X = np.vstack([x for x, _ in kept])
        values, _ = model.predict(X)
        augmented.append(Dataset(t=t, X=X, y=values, pseudo=True))
        logger.debug("warm start from step %d: %d of %d optima kept", t, len(kept), len(optima))
    return augmented
