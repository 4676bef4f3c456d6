"""
Single-output Gaussian-process regression module.

This module provides the isotropic RBF kernel, time-tagged datasets,
maximum-likelihood fitting of the kernel hyperparameters and posterior
prediction with analytic gradients of the predictive mean and variance.
Fitted models are immutable and safe to read from several threads.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import InputError, NumericalError

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)

# Two inputs closer than this in every coordinate count as duplicates
DUPLICATE_TOL = 1e-12

# Returned to the optimizer when a trial point cannot be factorized
_FAILED_OBJECTIVE = 1e25


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of the RBF kernel gamma * exp(-(|x - x'| / ell)^2)."""

    gamma: float
    ell: float

    def __post_init__(self):
        for name in ("gamma", "ell"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0.0:
                raise InputError(f"kernel parameter {name} must be positive and finite, got {value!r}")

    @classmethod
    def from_log(cls, theta: Sequence[float]) -> "KernelParams":
        """Build from (log gamma, log ell)."""
        return cls(gamma=float(np.exp(theta[0])), ell=float(np.exp(theta[1])))

    def to_log(self) -> np.ndarray:
        return np.array([math.log(self.gamma), math.log(self.ell)])

    def as_features(self) -> np.ndarray:
        """Feature vector (gamma, ell) used by the source selection."""
        return np.array([self.gamma, self.ell])


def _as_point(x, name: str = "x") -> np.ndarray:
    point = np.asarray(x, dtype=float)
    if point.ndim == 0:
        point = point.reshape(1)
    if point.ndim != 1:
        raise InputError(f"{name} must be a 1-D point, got shape {point.shape}")
    return point


def _check_same_dim(x: np.ndarray, x2: np.ndarray):
    if x.shape != x2.shape:
        raise InputError(f"dimension mismatch: {x.shape[0]} vs {x2.shape[0]}")


def rbf_eval(x, x2, params: KernelParams) -> float:
    """
    Evaluate the RBF kernel between two points.

    Args:
        x: First point
        x2: Second point
        params: Kernel hyperparameters

    Returns:
        gamma * exp(-(|x - x2| / ell)^2)
    """
    x = _as_point(x)
    x2 = _as_point(x2, "x2")
    _check_same_dim(x, x2)
    d = x - x2
    return float(params.gamma * np.exp(-np.dot(d, d) / params.ell ** 2))


def rbf_grad_x(x, x2, params: KernelParams) -> np.ndarray:
    """
    Gradient of the RBF kernel with respect to its first argument.

    Returns:
        -(2 / ell^2) * (x - x2) * k(x, x2)
    """
    x = _as_point(x)
    x2 = _as_point(x2, "x2")
    _check_same_dim(x, x2)
    return -(2.0 / params.ell ** 2) * (x - x2) * rbf_eval(x, x2, params)


def rbf_matrix(X1: np.ndarray, X2: np.ndarray, params: KernelParams) -> np.ndarray:
    """Covariance block between the rows of X1 and the rows of X2."""
    return params.gamma * np.exp(-cdist(X1, X2, "sqeuclidean") / params.ell ** 2)


@dataclass(frozen=True)
class Observation:
    """A decision vector evaluated at time step t."""

    x: np.ndarray
    t: int
    y: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Observations collected at one time step.

    X holds one decision vector per row and y the matching objective values.
    Pseudo datasets carry surrogate predictions instead of evaluated values.
    """

    t: int
    X: np.ndarray
    y: np.ndarray
    pseudo: bool = False

    def __post_init__(self):
        X = np.array(self.X, dtype=float, ndmin=2)
        y = np.array(self.y, dtype=float).ravel()
        if X.shape[0] == 0 or X.shape[1] == 0:
            raise InputError(f"dataset at step {self.t} must hold at least one observation")
        if X.shape[0] != y.shape[0]:
            raise InputError(f"dataset at step {self.t}: {X.shape[0]} inputs but {y.shape[0]} values")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise InputError(f"dataset at step {self.t} contains non-finite values")
        if X.shape[0] > 1:
            gaps = cdist(X, X, "chebyshev")
            np.fill_diagonal(gaps, np.inf)
            if np.any(gaps <= DUPLICATE_TOL):
                raise InputError(f"dataset at step {self.t} contains duplicate inputs")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_observations(cls, observations: Iterable[Observation], pseudo: bool = False) -> "Dataset":
        observations = list(observations)
        if not observations:
            raise InputError("cannot build a dataset from zero observations")
        steps = {obs.t for obs in observations}
        if len(steps) != 1:
            raise InputError(f"observations of one dataset must share a time step, got {sorted(steps)}")
        return cls(
            t=observations[0].t,
            X=np.vstack([np.atleast_1d(obs.x) for obs in observations]),
            y=np.array([obs.y for obs in observations]),
            pseudo=pseudo,
        )

    @property
    def observations(self) -> List[Observation]:
        return [Observation(x=self.X[i].copy(), t=self.t, y=float(self.y[i])) for i in range(len(self))]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.X.shape[0]

    def append(self, x, y: float) -> "Dataset":
        """Return a new dataset with one more observation."""
        return Dataset(t=self.t, X=np.vstack([self.X, _as_point(x)]), y=np.append(self.y, y), pseudo=self.pseudo)

    def contains(self, x) -> bool:
        """Check whether x duplicates one of the stored inputs."""
        gaps = np.max(np.abs(self.X - _as_point(x)), axis=1)
        return bool(np.any(gaps <= DUPLICATE_TOL))

    def best(self) -> Tuple[np.ndarray, float]:
        """Best (maximal) observation; ties resolve to the earliest."""
        i = int(np.argmax(self.y))
        return self.X[i].copy(), float(self.y[i])

    def within(self, bounds: np.ndarray) -> bool:
        bounds = np.asarray(bounds, dtype=float)
        return bool(np.all(self.X >= bounds[:, 0]) and np.all(self.X <= bounds[:, 1]))


@dataclass(frozen=True)
class FitSettings:
    """Settings of the maximum-likelihood hyperparameter search."""

    n_starts: int = 5
    max_iter: int = 200
    grad_tol: float = 1e-6
    # Diagonal jitter relative to the mean prior variance, escalated x10 on failure
    jitter: float = 1e-6
    max_jitter: float = 1e-2
    normalize_y: bool = True
    # ell bounds as multiples of the search range R
    ell_bounds: Tuple[float, float] = (1e-3, 10.0)
    # gamma bounds as multiples of the sample variance of y
    gamma_bounds: Tuple[float, float] = (1e-6, 1e6)


def jitter_levels(jitter: float, max_jitter: float) -> List[float]:
    """Relative jitter values tried in order during factorization."""
    levels = [jitter]
    level = max(jitter, 1e-6)
    if level > jitter and level <= max_jitter:
        levels.append(level)
    while level * 10.0 <= max_jitter * (1.0 + 1e-9):
        level *= 10.0
        levels.append(level)
    return levels


def factorize(K: np.ndarray, jitter: float, max_jitter: float, label: str) -> Tuple[np.ndarray, float]:
    """
    Cholesky-factorize K plus relative jitter, escalating on failure.

    Args:
        K: Symmetric covariance matrix without jitter
        jitter: Starting relative jitter (multiplied by the mean of diag K)
        max_jitter: Largest relative jitter tried
        label: Name of the data being factorized, used in the error message

    Returns:
        Tuple of (lower Cholesky factor, absolute jitter used)
    """
    scale = float(np.mean(np.diag(K)))
    eye = np.eye(K.shape[0])
    for level in jitter_levels(jitter, max_jitter):
        try:
            chol = cholesky(K + level * scale * eye, lower=True)
        except LinAlgError:
            logger.debug("Cholesky failed for %s at relative jitter %.1e", label, level)
            continue
        return chol, level * scale
    raise NumericalError(f"covariance of {label} is not positive definite even with relative jitter {max_jitter:g}")


@dataclass(frozen=True, eq=False)
class GPModel:
    """
    A fitted Gaussian process.

    chol is the lower Cholesky factor of K + jitter * I, alpha = (K + jitter * I)^-1 (y - offset).
    """

    data: Dataset
    params: KernelParams
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    offset: float = 0.0
    log_likelihood: float = float("nan")

    @property
    def dim(self) -> int:
        return self.data.dim

    def predict(self, Z) -> Tuple[np.ndarray, np.ndarray]:
        """
        Posterior mean and variance at the rows of Z.

        Returns:
            Tuple of (mean, variance) arrays; variance is clamped at 0.
        """
        Z = self._check_inputs(Z)
        Ks = rbf_matrix(Z, self.data.X, self.params)
        mean = self.offset + Ks @ self.alpha
        v = solve_triangular(self.chol, Ks.T, lower=True)
        var = self.params.gamma - np.sum(v * v, axis=0)
        return mean, np.maximum(var, 0.0)

    def predict_grad(self, z) -> Tuple[float, float, np.ndarray, np.ndarray]:
        """
        Mean, variance and their gradients at a single point.

        Returns:
            Tuple of (mean, variance, d mean / dz, d variance / dz)
        """
        z = self._check_inputs(z)[0]
        diff = z - self.data.X
        k = self.params.gamma * np.exp(-np.sum(diff * diff, axis=1) / self.params.ell ** 2)
        dk = -(2.0 / self.params.ell ** 2) * diff * k[:, None]
        w = cho_solve((self.chol, True), k)
        mean = self.offset + float(k @ self.alpha)
        var = max(self.params.gamma - float(k @ w), 0.0)
        return mean, var, dk.T @ self.alpha, -2.0 * dk.T @ w

    def _check_inputs(self, Z) -> np.ndarray:
        Z = np.array(Z, dtype=float, ndmin=2)
        if Z.shape[1] != self.dim:
            raise InputError(f"dimension mismatch: model has {self.dim}, got {Z.shape[1]}")
        return Z


def gp_predict(model: GPModel, z) -> Tuple[float, float]:
    """
    Predict at a single point.

    Returns:
        Tuple of (mean, variance)
    """
    mean, var = model.predict(_as_point(z, "z"))
    return float(mean[0]), float(var[0])


def posterior_mean_grad(model: GPModel, z) -> np.ndarray:
    """Gradient of the posterior mean, (dk*/dz)^T K^-1 f."""
    return model.predict_grad(_as_point(z, "z"))[2]


def _lml(D2: np.ndarray, f: np.ndarray, theta: np.ndarray, jitter: float) -> Tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient in (log gamma, log ell); raises LinAlgError."""
    gamma, ell = np.exp(theta)
    C = np.exp(-D2 / ell ** 2)
    K = gamma * (C + jitter * np.eye(len(f)))
    chol = cholesky(K, lower=True)
    alpha = cho_solve((chol, True), f)
    value = -0.5 * f @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * len(f) * LOG_2PI
    M = np.outer(alpha, alpha) - cho_solve((chol, True), np.eye(len(f)))
    d_gamma = 0.5 * np.sum(M * K)
    d_ell = 0.5 * np.sum(M * (gamma * C * 2.0 * D2 / ell ** 2))
    return float(value), np.array([d_gamma, d_ell])


def log_marginal_likelihood(
    data: Dataset, params: KernelParams, jitter: float = 0.0, offset: float = 0.0, max_jitter: float = 1e-2
) -> Tuple[float, np.ndarray]:
    """
    Log marginal likelihood of the dataset under the given hyperparameters.

    Args:
        data: Training data
        params: Kernel hyperparameters
        jitter: Diagonal jitter relative to gamma; escalated x10 up to max_jitter on failure
        offset: Constant subtracted from y before evaluation

    Returns:
        Tuple of (value, gradient with respect to (log gamma, log ell))
    """
    D2 = cdist(data.X, data.X, "sqeuclidean")
    f = data.y - offset
    for level in jitter_levels(jitter, max_jitter):
        try:
            return _lml(D2, f, params.to_log(), level)
        except LinAlgError:
            logger.debug("likelihood factorization failed for step %d at jitter %.1e", data.t, level)
    raise NumericalError(f"covariance of dataset at step {data.t} is not positive definite")


def search_range(X: np.ndarray) -> float:
    """Largest coordinate range of the inputs, used when no search box is given."""
    spread = float(np.max(np.ptp(X, axis=0))) if len(X) > 1 else 0.0
    return spread if spread > 0.0 else 1.0


def multi_start_maximize(
    objective: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    starts: Sequence[np.ndarray],
    bounds: Sequence[Tuple[Optional[float], Optional[float]]],
    settings: FitSettings,
) -> Tuple[np.ndarray, float]:
    """
    Maximize a smooth objective from several starting points.

    The objective may raise LinAlgError at points where the covariance cannot be
    factorized; such points are reported to the optimizer as very poor.

    Returns:
        Tuple of (best point, best value); the value is -inf if every start failed.
    """

    def negated(theta):
        try:
            value, grad = objective(theta)
        except LinAlgError:
            return _FAILED_OBJECTIVE, np.zeros_like(theta)
        if not np.isfinite(value):
            return _FAILED_OBJECTIVE, np.zeros_like(theta)
        return -value, -grad

    best_theta, best_value = None, -np.inf
    for start in starts:
        start = np.asarray(start, dtype=float)
        start_value = -negated(start)[0]
        if start_value > best_value and start_value > -_FAILED_OBJECTIVE:
            best_theta, best_value = start, start_value
        result = minimize(
            negated,
            start,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": settings.max_iter, "gtol": settings.grad_tol},
        )
        value = -float(result.fun)
        if np.all(np.isfinite(result.x)) and value > best_value and value > -_FAILED_OBJECTIVE:
            best_theta, best_value = np.asarray(result.x, dtype=float), value
    if best_value <= -_FAILED_OBJECTIVE:
        best_value = -np.inf
    return best_theta, best_value


def gamma_scale(y: np.ndarray) -> float:
    """Sample variance of y floored at 1e-6, the scale of the gamma bounds."""
    return max(float(np.var(y)), 1e-6)


def make_gp_model(
    data: Dataset,
    params: KernelParams,
    jitter: float = 1e-6,
    max_jitter: float = 1e-2,
    offset: float = 0.0,
    log_likelihood: float = float("nan"),
) -> GPModel:
    """
    Condition a GP with fixed hyperparameters on a dataset.

    Raises:
        NumericalError: If K cannot be factorized even with max_jitter
    """
    K = rbf_matrix(data.X, data.X, params)
    chol, used = factorize(K, jitter, max_jitter, f"dataset at step {data.t}")
    alpha = cho_solve((chol, True), data.y - offset)
    for array in (chol, alpha):
        array.setflags(write=False)
    return GPModel(
        data=data, params=params, chol=chol, alpha=alpha, jitter=used, offset=offset, log_likelihood=log_likelihood
    )


def fit_gp(
    data: Dataset,
    settings: Optional[FitSettings] = None,
    search_width: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> GPModel:
    """
    Fit the RBF hyperparameters by maximizing the log marginal likelihood.

    Args:
        data: Training data
        settings: Fit settings (defaults used if None)
        search_width: Largest coordinate range R of the search box; derived from
            the inputs if None
        rng: Random generator for the multi-start initialization

    Returns:
        Fitted GPModel

    Raises:
        NumericalError: If the covariance cannot be factorized even after jitter escalation
    """
    settings = settings or FitSettings()
    rng = rng if rng is not None else np.random.default_rng(0)
    R = search_width if search_width is not None else search_range(data.X)
    offset = float(np.mean(data.y)) if settings.normalize_y else 0.0
    f = data.y - offset
    variance = gamma_scale(data.y)

    bounds = [
        (math.log(settings.gamma_bounds[0] * variance), math.log(settings.gamma_bounds[1] * variance)),
        (math.log(settings.ell_bounds[0] * R), math.log(settings.ell_bounds[1] * R)),
    ]
    starts = [np.clip([math.log(variance), math.log(R / 4.0)], [b[0] for b in bounds], [b[1] for b in bounds])]
    for _ in range(settings.n_starts - 1):
        starts.append(np.array([rng.uniform(*bounds[0]), rng.uniform(*bounds[1])]))

    D2 = cdist(data.X, data.X, "sqeuclidean")
    theta, value = multi_start_maximize(lambda th: _lml(D2, f, th, settings.jitter), starts, bounds, settings)
    if theta is None:
        raise NumericalError(f"no hyperparameter start could factorize the covariance of dataset at step {data.t}")
    params = KernelParams.from_log(theta)
    logger.debug("fitted step %d: gamma=%.4g ell=%.4g lml=%.4f", data.t, params.gamma, params.ell, value)
    return make_gp_model(data, params, settings.jitter, settings.max_jitter, offset, value)
