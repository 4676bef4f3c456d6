import itertools

import numpy as np
import pytest

from core.errors import InputError
from core.gp import KernelParams
from core.source_select import HyperparamArchive, SourcePolicy, kmeans, normalize_features, select_sources


def _archive(rows) -> HyperparamArchive:
    archive = HyperparamArchive()
    for t, (gamma, ell) in enumerate(rows, start=1):
        archive.add(t, KernelParams(gamma, ell))
    return archive


def _sse(points, labels):
    return sum(np.sum((points[labels == c] - points[labels == c].mean(axis=0)) ** 2) for c in np.unique(labels))


def test_normalize_features_min_max():
    np.testing.assert_allclose(normalize_features(np.array([[1.0], [2.0], [3.0]]))[:, 0], [0.0, 0.5, 1.0])
    np.testing.assert_allclose(normalize_features(np.array([[4.0, 1.0], [4.0, 2.0]]))[:, 0], [0.0, 0.0])
    np.testing.assert_allclose(normalize_features(_archive([(2.0, 3.0)])), [[0.0, 0.0]])


def test_kmeans_single_cluster_is_the_mean():
    rng = np.random.default_rng(0)
    points = rng.normal(size=(12, 2))
    result = kmeans(points, 1, rng)
    np.testing.assert_allclose(result.centroids[0], points.mean(axis=0))
    assert np.all(result.assignments == 0)


def test_kmeans_one_cluster_per_point():
    rng = np.random.default_rng(1)
    points = rng.normal(size=(5, 2))
    result = kmeans(points, 5, rng)
    assert sorted(result.assignments) == [0, 1, 2, 3, 4]
    assert result.inertia == pytest.approx(0.0, abs=1e-20)


def test_kmeans_rejects_too_many_clusters():
    with pytest.raises(InputError):
        kmeans(np.zeros((2, 2)), 3, np.random.default_rng(0))


def test_kmeans_finds_optimal_two_partition():
    rng = np.random.default_rng(2)
    points = np.vstack([rng.normal(0.0, 0.1, size=(5, 2)), rng.normal(10.0, 0.1, size=(5, 2))])
    result = kmeans(points, 2, rng)
    best = min(
        (_sse(points, np.array(labels)), labels)
        for labels in itertools.product([0, 1], repeat=len(points))
        if 0 < sum(labels) < len(points)
    )
    assert _sse(points, result.assignments) == pytest.approx(best[0])


def test_kmeans_inertia_never_increases():
    rng = np.random.default_rng(3)
    for _ in range(10):
        points = rng.normal(size=(30, 2))
        history = kmeans(points, 4, rng).inertia_history
        assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))


def test_select_sources_returns_everything_when_archive_is_small():
    archive = _archive([(1.0, 1.0), (2.0, 2.0)])
    assert select_sources(archive, 3, np.random.default_rng(0)) == [1, 2]


def test_select_sources_one_per_separated_triplet():
    rows = [
        (1.0, 1.0), (1.1, 1.0), (1.05, 1.1),
        (50.0, 20.0), (50.5, 20.0), (50.2, 20.4),
        (100.0, 1.0), (100.3, 1.2), (99.8, 1.1),
    ]
    archive = _archive(rows)
    chosen = select_sources(archive, 3, np.random.default_rng(4))
    assert len(chosen) == 3
    assert {(t - 1) // 3 for t in chosen} == {0, 1, 2}
    features = normalize_features(archive)
    for t in chosen:
        group = [(t - 1) // 3 * 3 + i for i in range(3)]
        centroid = features[group].mean(axis=0)
        distances = [np.sum((features[i] - centroid) ** 2) for i in group]
        assert t - 1 == group[int(np.argmin(distances))]


def test_select_sources_identical_features_prefers_recent_steps():
    archive = _archive([(2.0, 5.0)] * 7)
    assert select_sources(archive, 3, np.random.default_rng(5)) == [5, 6, 7]


def test_select_sources_is_scale_invariant():
    rows = np.random.default_rng(6).uniform(0.5, 5.0, size=(10, 2))
    a = select_sources(_archive(rows), 3, np.random.default_rng(7))
    b = select_sources(_archive(rows * 13.0), 3, np.random.default_rng(7))
    assert a == b


def test_select_sources_output_is_sorted_and_unique():
    rows = np.random.default_rng(8).uniform(0.5, 5.0, size=(9, 2))
    for seed in range(5):
        chosen = select_sources(_archive(rows), 3, np.random.default_rng(seed))
        assert chosen == sorted(set(chosen)) and len(chosen) == 3


def test_alternative_policies():
    archive = _archive([(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (9.0, 9.0), (1.1, 1.0)])
    assert select_sources(archive, 2, np.random.default_rng(0), SourcePolicy.RECENT) == [4, 5]
    similar = select_sources(archive, 2, np.random.default_rng(0), SourcePolicy.SIMILAR, KernelParams(1.0, 1.0))
    assert similar == [1, 5]
    random = select_sources(archive, 2, np.random.default_rng(0), SourcePolicy.RANDOM)
    assert len(random) == 2 and set(random) <= set(range(1, 6))
    with pytest.raises(InputError):
        select_sources(archive, 2, np.random.default_rng(0), SourcePolicy.SIMILAR)
