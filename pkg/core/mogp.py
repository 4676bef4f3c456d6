"""
Multi-output Gaussian-process module.

Models observations from several time steps jointly. Each task (time step)
has its own RBF kernel k_i and the cross-task covariance is

    k((x, t), (x', t')) = sum_i [A_i]_{t,t'} k_i(x, x')

Two structures for the task-correlation matrices A_i are supported:
- HMOGP: fixed 0/1 masks, A_i[t, t'] = 1 iff t >= i and t' >= i, so the
  covariance is the prefix sum of the kernels up to min(t, t').
- LMC: A_i = B_i B_i^T with a learned T x r coefficient matrix B_i.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

from .errors import InputError, NumericalError
from .gp import (
    LOG_2PI,
    Dataset,
    FitSettings,
    KernelParams,
    factorize,
    gamma_scale,
    multi_start_maximize,
    search_range,
)

logger = logging.getLogger(__name__)


class CoregionKind(str, Enum):
    """Structure of the task-correlation matrices."""

    HMOGP = "hmogp"
    LMC = "lmc"


@dataclass(frozen=True)
class CoregionalizationSpec:
    """
    Shape of the multi-output covariance.

    Attributes:
        kind: HMOGP or LMC
        T: Number of tasks
        r: Rank of each B_i (LMC only); 0 means r = T
    """

    kind: CoregionKind
    T: int
    r: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", CoregionKind(self.kind))
        if self.T < 1:
            raise InputError(f"number of tasks must be >= 1, got {self.T}")
        if self.r < 0:
            raise InputError(f"LMC rank must be >= 1, got {self.r}")

    @property
    def rank(self) -> int:
        return self.r if self.r > 0 else self.T


def hyperparameter_count(spec: CoregionalizationSpec) -> int:
    """
    Number of free hyperparameters of a multi-output covariance.

    HMOGP has (gamma_i, ell_i) per task kernel; LMC adds T coefficient matrices of size T x r.
    """
    if spec.kind is CoregionKind.HMOGP:
        return 2 * spec.T
    return 2 * spec.T + spec.T * spec.T * spec.rank


def hmogp_masks(T: int) -> np.ndarray:
    """Stack of the T masked task-correlation matrices, shape (T, T, T)."""
    idx = np.arange(T)
    return np.stack([np.outer(idx >= i, idx >= i).astype(float) for i in range(T)])


def task_correlations(spec: CoregionalizationSpec, coeffs: Optional[Sequence[np.ndarray]] = None) -> np.ndarray:
    """
    Task-correlation matrices A_i, shape (T, T, T).

    Args:
        spec: Covariance structure
        coeffs: The T coefficient matrices B_i (LMC only)
    """
    if spec.kind is CoregionKind.HMOGP:
        return hmogp_masks(spec.T)
    if coeffs is None or len(coeffs) != spec.T:
        raise InputError(f"LMC needs {spec.T} coefficient matrices")
    return np.stack([np.asarray(B) @ np.asarray(B).T for B in coeffs])


def mt_kernel_eval(
    p: Tuple[Sequence[float], int],
    q: Tuple[Sequence[float], int],
    kernels: Sequence[KernelParams],
    spec: CoregionalizationSpec,
    coeffs: Optional[Sequence[np.ndarray]] = None,
) -> float:
    """
    Multi-output covariance between (x, task) and (x2, task2).

    Args:
        p: Tuple of (x, task) with task in 1..T
        q: Tuple of (x2, task2) with task2 in 1..T
        kernels: One KernelParams per task kernel
        spec: Covariance structure
        coeffs: Coefficient matrices (LMC only)

    Returns:
        sum_i [A_i]_{task, task2} k_i(x, x2)
    """
    (x, task), (x2, task2) = p, q
    for value in (task, task2):
        if not 1 <= value <= spec.T:
            raise InputError(f"task index {value} outside 1..{spec.T}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise InputError(f"dimension mismatch: {x.shape[0]} vs {x2.shape[0]}")
    d2 = float(np.sum((x - x2) ** 2))
    if spec.kind is CoregionKind.HMOGP:
        return float(sum(kp.gamma * math.exp(-d2 / kp.ell ** 2) for kp in kernels[: min(task, task2)]))
    A = task_correlations(spec, coeffs)
    return float(sum(A[i, task - 1, task2 - 1] * kp.gamma * math.exp(-d2 / kp.ell ** 2) for i, kp in enumerate(kernels)))


def joint_covariance(
    X: np.ndarray, task_index: np.ndarray, kernels: Sequence[KernelParams], A: np.ndarray
) -> np.ndarray:
    """
    Covariance over stacked observations.

    Args:
        X: Stacked inputs, one per row
        task_index: 0-based task of every row
        kernels: Per-task kernel parameters
        A: Task-correlation matrices, shape (T, T, T)
    """
    D2 = cdist(X, X, "sqeuclidean")
    K = np.zeros_like(D2)
    for i, kp in enumerate(kernels):
        K += A[i][np.ix_(task_index, task_index)] * kp.gamma * np.exp(-D2 / kp.ell ** 2)
    return K


@dataclass(frozen=True, eq=False)
class MOGPModel:
    """
    A fitted multi-output GP.

    Tasks are re-indexed 1..T in the order given (ascending original time);
    predictions are made for the last task unless another is requested.
    """

    tasks: Tuple[Dataset, ...]
    spec: CoregionalizationSpec
    kernels: Tuple[KernelParams, ...]
    coeffs: Optional[Tuple[np.ndarray, ...]]
    X: np.ndarray
    task_index: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    offset: float = 0.0
    log_likelihood: float = float("nan")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def correlations(self) -> np.ndarray:
        return task_correlations(self.spec, self.coeffs)

    def _task(self, task: Optional[int]) -> int:
        task = self.spec.T if task is None else task
        if not 1 <= task <= self.spec.T:
            raise InputError(f"task index {task} outside 1..{self.spec.T}")
        return task - 1

    def _weights(self, tau: int) -> Tuple[np.ndarray, float]:
        """Per-kernel weights against every stacked row, and the prior variance at task tau."""
        A = self.correlations
        W = A[:, tau, :][:, self.task_index]
        prior = float(sum(A[i, tau, tau] * kp.gamma for i, kp in enumerate(self.kernels)))
        return W, prior

    def predict(self, Z, task: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        Posterior mean and variance at the rows of Z for one task.

        Returns:
            Tuple of (mean, variance) arrays; variance is clamped at 0.
        """
        Z = np.array(Z, dtype=float, ndmin=2)
        if Z.shape[1] != self.dim:
            raise InputError(f"dimension mismatch: model has {self.dim}, got {Z.shape[1]}")
        W, prior = self._weights(self._task(task))
        D2 = cdist(Z, self.X, "sqeuclidean")
        Ks = np.zeros_like(D2)
        for i, kp in enumerate(self.kernels):
            Ks += W[i][None, :] * kp.gamma * np.exp(-D2 / kp.ell ** 2)
        mean = self.offset + Ks @ self.alpha
        v = solve_triangular(self.chol, Ks.T, lower=True)
        return mean, np.maximum(prior - np.sum(v * v, axis=0), 0.0)

    def predict_grad(self, z, task: Optional[int] = None) -> Tuple[float, float, np.ndarray, np.ndarray]:
        """
        Mean, variance and their gradients at a single point.

        Returns:
            Tuple of (mean, variance, d mean / dz, d variance / dz)
        """
        z = np.asarray(z, dtype=float).ravel()
        if z.shape[0] != self.dim:
            raise InputError(f"dimension mismatch: model has {self.dim}, got {z.shape[0]}")
        W, prior = self._weights(self._task(task))
        diff = z - self.X
        d2 = np.sum(diff * diff, axis=1)
        k = np.zeros(len(d2))
        dk = np.zeros_like(diff)
        for i, kp in enumerate(self.kernels):
            ki = W[i] * kp.gamma * np.exp(-d2 / kp.ell ** 2)
            k += ki
            dk += -(2.0 / kp.ell ** 2) * diff * ki[:, None]
        w = cho_solve((self.chol, True), k)
        mean = self.offset + float(k @ self.alpha)
        var = max(prior - float(k @ w), 0.0)
        return mean, var, dk.T @ self.alpha, -2.0 * dk.T @ w


def predict_mt(model: MOGPModel, z, task: Optional[int] = None) -> Tuple[float, float]:
    """
    Predict a single point for one task (the current task T by default).

    Returns:
        Tuple of (mean, variance)
    """
    mean, var = model.predict(np.asarray(z, dtype=float).ravel(), task)
    return float(mean[0]), float(var[0])


def _stack(tasks: Sequence[Dataset]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not tasks:
        raise InputError("a multi-output GP needs at least one task")
    dims = {d.dim for d in tasks}
    if len(dims) != 1:
        raise InputError(f"tasks have different dimensions {sorted(dims)}")
    steps = [d.t for d in tasks]
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise InputError(f"tasks must be ordered by ascending time step, got {steps}")
    X = np.vstack([d.X for d in tasks])
    y = np.concatenate([d.y for d in tasks])
    task_index = np.concatenate([np.full(len(d), i) for i, d in enumerate(tasks)])
    return X, y, task_index


class _JointLikelihood:
    """Log marginal likelihood of stacked observations and its exact gradient."""

    def __init__(self, X, f, task_index, spec: CoregionalizationSpec, jitter: float):
        self.D2 = cdist(X, X, "sqeuclidean")
        self.f = f
        self.task_index = task_index
        self.spec = spec
        self.jitter = jitter
        self.N = len(f)
        self.onehot = np.eye(spec.T)[task_index]
        self.counts = self.onehot.sum(axis=0)

    def unpack(self, theta: np.ndarray) -> Tuple[List[KernelParams], Optional[List[np.ndarray]]]:
        T = self.spec.T
        logs = theta[: 2 * T].reshape(T, 2)
        kernels = [KernelParams.from_log(row) for row in logs]
        if self.spec.kind is CoregionKind.HMOGP:
            return kernels, None
        r = self.spec.rank
        coeffs = list(theta[2 * T :].reshape(T, T, r))
        return kernels, coeffs

    def __call__(self, theta: np.ndarray) -> Tuple[float, np.ndarray]:
        T = self.spec.T
        kernels, coeffs = self.unpack(theta)
        A = task_correlations(self.spec, coeffs)
        tix = self.task_index
        blocks = []
        K = np.zeros_like(self.D2)
        for i, kp in enumerate(kernels):
            Ci = kp.gamma * np.exp(-self.D2 / kp.ell ** 2)
            Ki = A[i][np.ix_(tix, tix)] * Ci
            blocks.append((Ci, Ki))
            K += Ki
        scale = float(np.mean(np.diag(K)))
        chol = cholesky(K + self.jitter * scale * np.eye(self.N), lower=True)
        alpha = cho_solve((chol, True), self.f)
        value = -0.5 * self.f @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * self.N * LOG_2PI
        M = np.outer(alpha, alpha) - cho_solve((chol, True), np.eye(self.N))
        trace_M = float(np.trace(M))

        grad = np.zeros_like(theta)
        for i, (kp, (Ci, Ki)) in enumerate(zip(kernels, blocks)):
            # jitter follows the mean prior variance, so every diagonal change feeds the jitter term
            grad[2 * i] = 0.5 * np.sum(M * Ki) + 0.5 * self.jitter * trace_M * float(np.mean(np.diag(Ki)))
            grad[2 * i + 1] = 0.5 * np.sum(M * Ki * (2.0 * self.D2 / kp.ell ** 2))
        if coeffs is not None:
            r = self.spec.rank
            offset = 2 * T
            for i, B in enumerate(coeffs):
                G = M * blocks[i][0]
                g_B = self.onehot.T @ (G @ B[tix])
                g_B += self.jitter * trace_M * kernels[i].gamma * (self.counts / self.N)[:, None] * B
                grad[offset + i * T * r : offset + (i + 1) * T * r] = g_B.ravel()
        return float(value), grad


def make_mogp_model(
    tasks: Sequence[Dataset],
    spec: CoregionalizationSpec,
    kernels: Sequence[KernelParams],
    coeffs: Optional[Sequence[np.ndarray]] = None,
    jitter: float = 1e-6,
    max_jitter: float = 1e-2,
    offset: float = 0.0,
    log_likelihood: float = float("nan"),
) -> MOGPModel:
    """
    Condition a multi-output GP with fixed hyperparameters.

    Raises:
        NumericalError: If the joint covariance cannot be factorized even with max_jitter
    """
    tasks = tuple(tasks)
    if spec.T != len(tasks):
        raise InputError(f"spec declares {spec.T} tasks but {len(tasks)} were given")
    if len(kernels) != spec.T:
        raise InputError(f"need {spec.T} task kernels, got {len(kernels)}")
    X, y, task_index = _stack(tasks)
    A = task_correlations(spec, coeffs)
    K = joint_covariance(X, task_index, kernels, A)
    chol, used = factorize(K, jitter, max_jitter, f"tasks at steps {[d.t for d in tasks]}")
    alpha = cho_solve((chol, True), y - offset)
    for array in (X, task_index, chol, alpha):
        array.setflags(write=False)
    return MOGPModel(
        tasks=tasks,
        spec=spec,
        kernels=tuple(kernels),
        coeffs=None if coeffs is None else tuple(np.asarray(B, dtype=float) for B in coeffs),
        X=X,
        task_index=task_index,
        chol=chol,
        alpha=alpha,
        jitter=used,
        offset=offset,
        log_likelihood=log_likelihood,
    )


def fit_mogp(
    tasks: Sequence[Dataset],
    spec: Optional[CoregionalizationSpec] = None,
    settings: Optional[FitSettings] = None,
    search_width: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> MOGPModel:
    """
    Jointly fit a multi-output GP by maximizing the log marginal likelihood.

    Args:
        tasks: Datasets ordered by ascending time step; the last is the current task
            and supplies the centering offset
        spec: Covariance structure (HMOGP over len(tasks) tasks if None)
        settings: Fit settings shared with the single-output GP
        search_width: Largest coordinate range R of the search box
        rng: Random generator for the multi-start initialization

    Returns:
        Fitted MOGPModel

    Raises:
        NumericalError: If the joint covariance cannot be factorized even after jitter escalation
    """
    tasks = tuple(tasks)
    spec = spec or CoregionalizationSpec(CoregionKind.HMOGP, len(tasks))
    settings = settings or FitSettings()
    rng = rng if rng is not None else np.random.default_rng(0)
    if spec.T != len(tasks):
        raise InputError(f"spec declares {spec.T} tasks but {len(tasks)} were given")
    X, y, task_index = _stack(tasks)
    R = search_width if search_width is not None else search_range(X)
    # constant prior mean of every task is the current task's sample mean
    offset = float(np.mean(tasks[-1].y)) if settings.normalize_y else 0.0
    variance = gamma_scale(y)
    T = spec.T

    gamma_range = (math.log(settings.gamma_bounds[0] * variance), math.log(settings.gamma_bounds[1] * variance))
    ell_range = (math.log(settings.ell_bounds[0] * R), math.log(settings.ell_bounds[1] * R))
    bounds = [gamma_range, ell_range] * T
    n_coeffs = 0
    if spec.kind is CoregionKind.LMC:
        n_coeffs = T * T * spec.rank
        bounds += [(None, None)] * n_coeffs
    lower = np.array([b[0] for b in bounds[: 2 * T]])
    upper = np.array([b[1] for b in bounds[: 2 * T]])

    first = np.clip(np.tile([math.log(variance / T), math.log(R / 4.0)], T), lower, upper)
    starts = [np.concatenate([first, rng.normal(0.0, math.sqrt(0.1), n_coeffs)])]
    for _ in range(settings.n_starts - 1):
        logs = [value for _ in range(T) for value in (rng.uniform(*gamma_range), rng.uniform(*ell_range))]
        starts.append(np.concatenate([logs, rng.normal(0.0, math.sqrt(0.1), n_coeffs)]))

    likelihood = _JointLikelihood(X, y - offset, task_index, spec, settings.jitter)
    theta, value = multi_start_maximize(likelihood, starts, bounds, settings)
    if theta is None:
        raise NumericalError(f"no start could factorize the covariance of tasks at steps {[d.t for d in tasks]}")
    kernels, coeffs = likelihood.unpack(theta)
    logger.debug("fitted %s over %d tasks (%d rows): lml=%.4f", spec.kind.value, T, len(y), value)
    return make_mogp_model(tasks, spec, kernels, coeffs, settings.jitter, settings.max_jitter, offset, value)
