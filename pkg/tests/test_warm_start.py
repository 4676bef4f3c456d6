import numpy as np
import pytest

from core.gp import Dataset, KernelParams, make_gp_model
from core.warm_start import (
    WarmStartConfig,
    build_augmented,
    diversity_filter,
    extract_local_optima,
    projected_gradient,
)

BOUNDS = np.array([[0.0, 10.0]])
R = 10.0


def _bimodal_model(rng):
    centers = [rng.uniform(1.5, 4.0), rng.uniform(6.0, 8.5)]
    heights = rng.uniform(1.0, 5.0, size=2)
    params = KernelParams(gamma=rng.uniform(1.0, 5.0), ell=rng.uniform(0.8, 1.5))
    return make_gp_model(Dataset(t=1, X=np.array(centers)[:, None], y=heights), params)


def _grid_maxima(model):
    grid = np.linspace(BOUNDS[0, 0], BOUNDS[0, 1], 10001)
    mean, _ = model.predict(grid[:, None])
    padded = np.concatenate([[-np.inf], mean, [-np.inf]])
    peaks = (padded[1:-1] > padded[:-2]) & (padded[1:-1] >= padded[2:])
    return grid[peaks]


def test_extracts_single_peak():
    X = np.linspace(1.0, 9.0, 7)[:, None]
    y = 40.0 * np.exp(-((X[:, 0] - 5.5) ** 2) / 8.0)
    model = make_gp_model(Dataset(t=1, X=X, y=y), KernelParams(gamma=400.0, ell=3.0))
    optima = extract_local_optima(model, WarmStartConfig(), BOUNDS, np.random.default_rng(0))
    grid = np.linspace(0.0, 10.0, 10001)
    argmax = grid[int(np.argmax(model.predict(grid[:, None])[0]))]
    assert abs(optima[0][0][0] - argmax) <= 0.05 * R


def test_recovers_every_grid_maximum_of_bimodal_means():
    rng = np.random.default_rng(1)
    cfg = WarmStartConfig()
    eps_l = cfg.diversity_threshold(BOUNDS)
    for seed in range(10):
        model = _bimodal_model(rng)
        optima = extract_local_optima(model, cfg, BOUNDS, np.random.default_rng(seed))
        found = np.array([x[0] for x, _ in optima])
        for peak in _grid_maxima(model):
            assert np.min(np.abs(found - peak)) <= 0.05 * R
        kept = diversity_filter(optima, cfg.sigma, eps_l)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                assert np.linalg.norm(kept[i][0] - kept[j][0]) >= eps_l


def test_returned_points_satisfy_gradient_tolerance():
    model = _bimodal_model(np.random.default_rng(2))
    cfg = WarmStartConfig()
    tol = cfg.grad_tol * model.params.gamma / R
    optima = extract_local_optima(model, cfg, BOUNDS, np.random.default_rng(3))
    values = [value for _, value in optima]
    assert values == sorted(values, reverse=True)
    for x, value in optima:
        mean, _, grad, _ = model.predict_grad(x)
        assert np.max(np.abs(projected_gradient(x, grad, BOUNDS))) <= tol
        assert value == pytest.approx(mean)


def test_projected_gradient_zeroes_outward_components():
    bounds = np.array([[0.0, 1.0], [0.0, 1.0]])
    g = projected_gradient(np.array([1.0, 0.0]), np.array([2.0, -3.0]), bounds)
    np.testing.assert_array_equal(g, [0.0, 0.0])
    g = projected_gradient(np.array([1.0, 0.0]), np.array([-2.0, 3.0]), bounds)
    np.testing.assert_array_equal(g, [-2.0, 3.0])


def test_diversity_filter_rules():
    spread = [(np.array([float(i)]), 10.0 - i) for i in range(5)]
    assert [v for _, v in diversity_filter(spread, 3, 0.5)] == [10.0, 9.0, 8.0]

    with_duplicate = [(np.array([0.0]), 5.0), (np.array([0.0]), 4.0), (np.array([3.0]), 3.0)]
    assert [v for _, v in diversity_filter(with_duplicate, 3, 0.1)] == [5.0, 3.0]

    crowded = [(np.array([0.0]), 5.0), (np.array([0.05]), 4.0), (np.array([1.0]), 3.0)]
    assert len(diversity_filter(crowded, 3, 0.1)) == 2


def test_build_augmented_tags_and_values():
    model = _bimodal_model(np.random.default_rng(4))
    cfg = WarmStartConfig(sigma=3)
    augmented = build_augmented([(4, model)], cfg, BOUNDS, np.random.default_rng(5))
    assert len(augmented) == 1
    data = augmented[0]
    assert data.pseudo and data.t == 4 and 1 <= len(data) <= 3
    assert data.within(BOUNDS)
    np.testing.assert_allclose(data.y, model.predict(data.X)[0], atol=1e-12)


def test_build_augmented_is_deterministic():
    model = _bimodal_model(np.random.default_rng(6))
    a = build_augmented([(1, model)], WarmStartConfig(), BOUNDS, np.random.default_rng(7))
    b = build_augmented([(1, model)], WarmStartConfig(), BOUNDS, np.random.default_rng(7))
    np.testing.assert_array_equal(a[0].X, b[0].X)
    np.testing.assert_array_equal(a[0].y, b[0].y)


def test_falls_back_to_incumbent_when_nothing_converges():
    model = _bimodal_model(np.random.default_rng(8))
    cfg = WarmStartConfig(grad_tol=1e-300, max_iter=1, random_starts_per_dim=1)
    data = build_augmented([(2, model)], cfg, BOUNDS, np.random.default_rng(9))[0]
    x_best, _ = model.data.best()
    np.testing.assert_array_equal(data.X[0], x_best)
    assert len(data) == 1
