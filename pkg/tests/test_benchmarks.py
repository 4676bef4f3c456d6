import math

import numpy as np
import pytest

from core.benchmarks import (
    DynamicObjective,
    MPBState,
    Peak,
    PeakShape,
    Severity,
    dump_state,
    load_state,
    make_bounds,
    make_problem,
    mpb_advance,
    mpb_eval,
    mpb_init,
    random_direction,
    reflect,
    true_optimum,
)
from core.errors import InputError


def _lone_peak(shape, height=50.0, width=2.0, center=0.0, bounds=(-100.0, 100.0)):
    return MPBState(
        peaks=(Peak(center=np.array([center]), height=height, width=width),),
        bounds=np.array([bounds]),
        shape=shape,
    )


def test_init_respects_ranges():
    state = mpb_init(3, 5, PeakShape.CONE, None, np.random.default_rng(0))
    assert len(state.peaks) == 5 and state.dim == 3
    assert np.all((state.heights >= 30.0) & (state.heights <= 70.0))
    assert np.all((state.widths >= 1.0) & (state.widths <= 12.0))
    assert np.all((state.centers >= 0.0) & (state.centers <= 100.0))


def test_init_is_seeded_and_validated():
    a = mpb_init(2, 4, PeakShape.GAUSSIAN, None, np.random.default_rng(1))
    b = mpb_init(2, 4, PeakShape.GAUSSIAN, None, np.random.default_rng(1))
    np.testing.assert_array_equal(a.centers, b.centers)
    np.testing.assert_array_equal(a.heights, b.heights)
    with pytest.raises(InputError):
        mpb_init(0, 5, PeakShape.CONE, None, np.random.default_rng(0))
    with pytest.raises(InputError):
        mpb_init(2, 5, PeakShape.CONE, make_bounds(3), np.random.default_rng(0))


def test_cone_and_gaussian_values():
    assert mpb_eval(_lone_peak(PeakShape.CONE), [10.0]) == pytest.approx(30.0)
    assert mpb_eval(_lone_peak(PeakShape.GAUSSIAN, width=3.0), [3.0]) == pytest.approx(50.0 * math.exp(-0.5))


def test_value_at_highest_center_is_its_height():
    state = mpb_init(2, 5, PeakShape.CONE, None, np.random.default_rng(2))
    best = int(np.argmax(state.heights))
    assert mpb_eval(state, state.centers[best]) == pytest.approx(state.heights[best])
    x = state.centers[0] + 1.0
    assert mpb_eval(state, x) == mpb_eval(state, x)


def test_shift_length_equals_severity_before_reflection():
    state = _lone_peak(PeakShape.CONE, center=0.0)
    state = MPBState(peaks=state.peaks, bounds=state.bounds, severity=Severity(height=0.0, shift=3.5, width=0.0))
    moved = mpb_advance(state, np.random.default_rng(3))
    assert np.linalg.norm(moved.centers[0] - state.centers[0]) == pytest.approx(3.5)
    assert moved.t == 2


def test_zero_severities_only_advance_the_counter():
    state = mpb_init(3, 5, PeakShape.CONE, None, np.random.default_rng(4), Severity(0.0, 0.0, 0.0))
    moved = mpb_advance(state, np.random.default_rng(5))
    np.testing.assert_array_equal(moved.centers, state.centers)
    np.testing.assert_array_equal(moved.heights, state.heights)
    np.testing.assert_array_equal(moved.widths, state.widths)
    assert moved.t == state.t + 1


def test_clamps_hold_over_many_advances():
    rng = np.random.default_rng(6)
    state = mpb_init(2, 5, PeakShape.CONE, None, rng, Severity(height=5.0, shift=7.0, width=0.5))
    for _ in range(100):
        state = mpb_advance(state, rng)
        assert np.all((state.heights >= 30.0) & (state.heights <= 70.0))
        assert np.all((state.widths >= 1.0) & (state.widths <= 12.0))
        assert np.all((state.centers >= 0.0) & (state.centers <= 100.0))


def test_reflect_and_random_direction():
    bounds = np.array([[0.0, 10.0], [0.0, 10.0]])
    np.testing.assert_allclose(reflect(np.array([-1.0, 12.5]), bounds), [1.0, 7.5])
    np.testing.assert_allclose(reflect(np.array([-25.0, 3.0]), bounds), [5.0, 3.0])
    u = random_direction(4, np.random.default_rng(7))
    assert np.linalg.norm(u) == pytest.approx(1.0)


def test_true_optimum_of_given_heights():
    peaks = tuple(
        Peak(center=np.array([c]), height=h, width=1.0) for c, h in [(10.0, 40.0), (50.0, 65.0), (90.0, 55.0)]
    )
    state = MPBState(peaks=peaks, bounds=make_bounds(1))
    x_star, f_star = true_optimum(state)
    assert f_star == 65.0 and x_star[0] == 50.0
    assert mpb_eval(state, x_star) == f_star


def test_true_optimum_matches_enumeration_and_bounds_a_grid():
    rng = np.random.default_rng(8)
    for shape in PeakShape:
        state = mpb_init(1, 5, shape, None, rng)
        _, f_star = true_optimum(state)
        assert f_star == max(mpb_eval(state, c) for c in state.centers)
        grid = np.linspace(0.0, 100.0, 100000)
        values = [mpb_eval(state, [x]) for x in grid[::100]]
        assert max(values) <= f_star


def test_dump_and_load_reproduce_the_state(tmp_path):
    state = mpb_init(3, 4, PeakShape.GAUSSIAN, None, np.random.default_rng(9), Severity(5.0, 7.0, 0.5))
    state = mpb_advance(state, np.random.default_rng(10))
    path = tmp_path / "landscape.txt"
    path.write_text(dump_state(state), encoding="utf-8")
    loaded = load_state(path)
    np.testing.assert_array_equal(loaded.centers, state.centers)
    np.testing.assert_array_equal(loaded.heights, state.heights)
    np.testing.assert_array_equal(loaded.widths, state.widths)
    np.testing.assert_array_equal(loaded.bounds, state.bounds)
    assert loaded.shape is PeakShape.GAUSSIAN and loaded.t == 2 and loaded.severity == state.severity


def test_load_rejects_malformed_dump():
    with pytest.raises(InputError):
        load_state("# shape=cone\n1 2 3\n")


def test_objective_counts_and_checks_inputs():
    problem = make_problem(2, rng=np.random.default_rng(11))
    assert isinstance(problem, DynamicObjective)
    problem.evaluate([50.0, 50.0], t=1)
    problem.evaluate([1.0, 2.0])
    assert problem.evaluations == 2 and problem.evaluations_per_step == [2]
    with pytest.raises(InputError):
        problem.evaluate([101.0, 0.0])
    with pytest.raises(InputError):
        problem.evaluate([1.0, 1.0], t=2)
    assert problem.evaluations == 2
    problem.advance()
    assert problem.t == 2 and problem.evaluations_per_step == [2, 0]
    x_star, f_star = problem.true_optimum()
    assert problem.evaluate(x_star, t=2) == f_star
