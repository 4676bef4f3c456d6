"""
Source data selection module.

Each finished time step is summarized by the hyperparameters (gamma, ell) of a
GP fitted on its data. The adaptive policy clusters these features with k-means
and picks, per cluster, the step closest to the centroid, so the chosen sources
are representative of the landscapes seen so far rather than merely recent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InputError
from .gp import KernelParams

logger = logging.getLogger(__name__)

MAX_KMEANS_ITER = 100


class SourcePolicy(str, Enum):
    """How source time steps are picked."""

    ADAPTIVE = "adaptive"
    RECENT = "recent"
    SIMILAR = "similar"
    RANDOM = "random"


@dataclass
class HyperparamArchive:
    """Feature vector h^t = (gamma_t, ell_t) of every completed time step."""

    entries: Dict[int, np.ndarray] = field(default_factory=dict)

    def add(self, t: int, params: KernelParams):
        features = params.as_features()
        if not np.all(np.isfinite(features)):
            raise InputError(f"non-finite hyperparameters for step {t}")
        self.entries[t] = features

    @property
    def steps(self) -> List[int]:
        return sorted(self.entries)

    def features(self) -> np.ndarray:
        return np.vstack([self.entries[t] for t in self.steps])

    def __len__(self) -> int:
        return len(self.entries)


def normalize_features(features: np.ndarray) -> np.ndarray:
    """
    Min-max scale every column to [0, 1]; constant columns map to 0.

    Args:
        features: One feature row per step (or a HyperparamArchive)
    """
    if isinstance(features, HyperparamArchive):
        features = features.features()
    features = np.array(features, dtype=float, ndmin=2)
    low = features.min(axis=0)
    span = features.max(axis=0) - low
    safe = np.where(span > 0.0, span, 1.0)
    return np.where(span > 0.0, (features - low) / safe, 0.0)


@dataclass
class KMeansResult:
    """Outcome of a k-means run."""

    assignments: np.ndarray
    centroids: np.ndarray
    inertia_history: List[float]

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _seed_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; degenerate distance mass falls back to uniform picks among unused points."""
    n = len(points)
    chosen = [int(rng.integers(n))]
    for _ in range(1, k):
        d2 = np.min(cdist(points, points[chosen], "sqeuclidean"), axis=1)
        total = d2.sum()
        if total > 0.0:
            chosen.append(int(rng.choice(n, p=d2 / total)))
        else:
            unused = np.setdiff1d(np.arange(n), chosen)
            chosen.append(int(rng.choice(unused)))
    return points[chosen].copy()


def _refill_empty(points: np.ndarray, assignments: np.ndarray, centroids: np.ndarray, k: int):
    """Move the point farthest from its centroid into each empty cluster (ties: latest row)."""
    for cluster in range(k):
        if np.any(assignments == cluster):
            continue
        sizes = np.bincount(assignments, minlength=k)
        movable = sizes[assignments] > 1
        dist = np.sum((points - centroids[assignments]) ** 2, axis=1)
        dist = np.where(movable, dist, -np.inf)
        far = len(points) - 1 - int(np.argmax(dist[::-1]))
        assignments[far] = cluster
        centroids[cluster] = points[far]


def kmeans(points, k: int, rng: np.random.Generator) -> KMeansResult:
    """
    Lloyd's k-means with k-means++ seeding.

    Iterates until assignments stop changing or MAX_KMEANS_ITER iterations.
    Empty clusters are refilled with the point farthest from its centroid.

    Args:
        points: One point per row
        k: Number of clusters (1 <= k <= number of points)
        rng: Random generator for the seeding

    Returns:
        KMeansResult with assignments, centroids and the within-cluster SSE per iteration
    """
    points = np.array(points, dtype=float, ndmin=2)
    n = len(points)
    if n == 0:
        raise InputError("k-means needs at least one point")
    if not 1 <= k <= n:
        raise InputError(f"k must be in 1..{n}, got {k}")

    centroids = _seed_centroids(points, k, rng)
    assignments = np.full(n, -1)
    history: List[float] = []
    for _ in range(MAX_KMEANS_ITER):
        new = np.argmin(cdist(points, centroids, "sqeuclidean"), axis=1)
        _refill_empty(points, new, centroids, k)
        history.append(float(np.sum((points - centroids[new]) ** 2)))
        if np.array_equal(new, assignments):
            break
        assignments = new
        centroids = np.vstack([points[assignments == c].mean(axis=0) for c in range(k)])
    history.append(float(np.sum((points - centroids[assignments]) ** 2)))
    return KMeansResult(assignments=assignments, centroids=centroids, inertia_history=history)


def _nearest_steps(steps: Sequence[int], rows: np.ndarray, target: np.ndarray, count: int) -> List[int]:
    """The count steps whose rows are closest to target; ties prefer later steps."""
    dist = np.sum((rows - target) ** 2, axis=1)
    order = sorted(range(len(steps)), key=lambda i: (dist[i], -steps[i]))
    return [steps[i] for i in order[:count]]


def select_sources(
    archive: HyperparamArchive,
    k: int,
    rng: np.random.Generator,
    policy: SourcePolicy = SourcePolicy.ADAPTIVE,
    reference: Optional[KernelParams] = None,
) -> List[int]:
    """
    Pick up to k source time steps from the archive.

    Args:
        archive: Features of the completed steps
        k: Number of sources
        rng: Random generator (k-means seeding or random policy)
        policy: Selection policy; ADAPTIVE is the default clustering rule
        reference: Hyperparameters of the current step (SIMILAR policy only)

    Returns:
        Sorted, duplicate-free list of selected steps
    """
    policy = SourcePolicy(policy)
    steps = archive.steps
    if k < 1:
        raise InputError(f"number of sources must be >= 1, got {k}")
    if len(steps) <= k:
        return steps

    if policy is SourcePolicy.RECENT:
        return steps[-k:]
    if policy is SourcePolicy.RANDOM:
        return sorted(int(t) for t in rng.choice(steps, size=k, replace=False))
    if policy is SourcePolicy.SIMILAR:
        if reference is None:
            raise InputError("the similar policy needs the current step's hyperparameters")
        rows = normalize_features(np.vstack([archive.features(), reference.as_features()]))
        return sorted(_nearest_steps(steps, rows[:-1], rows[-1], k))

    rows = normalize_features(archive.features())
    result = kmeans(rows, k, rng)
    chosen = []
    for cluster in range(k):
        members = np.flatnonzero(result.assignments == cluster)
        member_steps = [steps[i] for i in members]
        chosen.extend(_nearest_steps(member_steps, rows[members], result.centroids[cluster], 1))
    logger.debug("clustered %d steps into %d groups, picked %s", len(steps), k, sorted(chosen))
    return sorted(set(chosen))
