from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from leakdrift.core import DAY, WEEK, RangeError, ShapeError, SizeError
from leakdrift.preprocess import (
    DEFAULT_LAGS,
    LagSpec,
    lag_matrix,
    standard_week,
    subtract_standard_week,
    week_difference,
    window_pair,
)
from leakdrift.scenario import GeneratorConfig, YEAR, generate_scenario
from tests.conftest import make_stream


def _cosine_amplitude(residual_means: np.ndarray, t: np.ndarray) -> float:
    basis = np.column_stack([np.ones_like(t, dtype=float), np.cos(2 * np.pi * t / YEAR), np.sin(2 * np.pi * t / YEAR)])
    coef, *_ = np.linalg.lstsq(basis, residual_means, rcond=None)
    return float(np.hypot(coef[1], coef[2]))


def test_fixed_week_template(rng):
    week = rng.normal(size=(WEEK, 3))
    sw = standard_week(make_stream(np.tile(week, (4, 1))))
    assert np.allclose(sw.mean, week) and np.allclose(sw.std, 0.0)


def test_two_week_statistics(rng):
    w, c = rng.normal(size=(WEEK, 2)), 3.0
    sw = standard_week(make_stream(np.vstack([w, w + c])))
    assert np.allclose(sw.mean, w + c / 2) and np.allclose(sw.std, c / 2)


def test_partial_weeks_are_ignored_and_short_streams_rejected(rng):
    w = rng.normal(size=(WEEK, 1))
    sw = standard_week(make_stream(np.vstack([w, w, rng.normal(size=(100, 1))])))
    assert np.allclose(sw.mean, w)
    with pytest.raises(SizeError):
        standard_week(make_stream(np.zeros((WEEK - 1, 1))))


def test_template_is_phase_aligned_for_offset_streams(rng):
    week = rng.normal(size=(WEEK, 1))
    s = make_stream(np.roll(np.tile(week, (3, 1)), -100, axis=0), t0=100)
    assert np.allclose(standard_week(s).mean, week)


def test_subtraction_of_own_tiling_is_zero_and_linear(rng):
    week = rng.normal(size=(WEEK, 2))
    s = make_stream(np.tile(week, (3, 1)))
    tpl = standard_week(s)
    assert np.allclose(subtract_standard_week(s, tpl).values, 0.0)
    shifted = make_stream(s.values + 2.5)
    assert np.allclose(subtract_standard_week(shifted, tpl).values, 2.5)
    with pytest.raises(ShapeError):
        subtract_standard_week(make_stream(np.zeros((WEEK, 3))), tpl)


def test_residual_template_is_zero_mean(rng):
    s = make_stream(rng.normal(size=(3 * WEEK + 50, 2)) * 10 + 40)
    r = subtract_standard_week(s, standard_week(s))
    assert np.allclose(standard_week(r).mean, 0.0, atol=1e-9 * 40)


def test_week_difference_examples(rng):
    week = rng.normal(size=(WEEK, 2))
    periodic = make_stream(np.tile(week, (3, 1)))
    d = week_difference(periodic)
    assert len(d) == 2 * WEEK and d.t0 == WEEK and np.allclose(d.values, 0.0)
    a = 0.01
    trend = make_stream(a * np.arange(2 * WEEK, dtype=float))
    assert np.allclose(week_difference(trend).values, WEEK * a)
    with pytest.raises(SizeError):
        week_difference(make_stream(np.zeros(WEEK)))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (WEEK + 20, 2), elements=st.floats(-1e3, 1e3)), st.floats(-1e3, 1e3))
def test_week_difference_ignores_constant_shifts(x, c):
    a = week_difference(make_stream(x)).values
    b = week_difference(make_stream(x + c)).values
    assert np.allclose(a, b, atol=1e-9)


@pytest.fixture(scope="module")
def year_baseline(request):
    from leakdrift.scenario import synthetic_network

    g = synthetic_network(6, 6, n_sensors=8, seed=3)
    return generate_scenario(g, GeneratorConfig(n_sensors=8), None, 0).stream


def test_standard_week_std_small_relative_to_daily_amplitude(year_baseline):
    sw = standard_week(year_baseline)
    daily = GeneratorConfig().daily_amplitude
    assert sw.std.mean() < 0.5 * daily


def test_residual_trends_of_the_two_strategies(year_baseline):
    """Standard-week residuals keep the seasonal cosine; week differencing shrinks it."""
    amp = GeneratorConfig().seasonal_amplitude
    r = subtract_standard_week(year_baseline, standard_week(year_baseline))
    a_sw = _cosine_amplitude(r.values.mean(axis=1), r.t)
    assert a_sw == pytest.approx(amp, rel=0.2)
    d = week_difference(year_baseline)
    a_wd = _cosine_amplitude(d.values.mean(axis=1), d.t)
    assert a_wd < a_sw


def test_window_pair_bounds():
    s = make_stream(np.arange(2 * WEEK, dtype=float))
    ref, test = window_pair(s, WEEK)
    assert (ref.start, ref.stop, test.start, test.stop) == (0, WEEK, WEEK, 2 * WEEK)
    with pytest.raises(RangeError):
        window_pair(s, WEEK - 1)
    with pytest.raises(RangeError):
        window_pair(s, WEEK + 1)


@given(st.integers(1, 50), st.integers(0, 200), st.integers(0, 200))
def test_window_pair_never_overlaps(L, a, extra):
    n = 2 * L + a + extra
    split = L + a
    ref, test = window_pair(make_stream(np.zeros(n)), split, L)
    assert ref.len == test.len == L and ref.stop == test.start == split


def test_window_pair_at_onset_separates_leak(grid, small_cfg):
    from leakdrift.scenario import Leak

    onset = 2 * WEEK
    cfg = small_cfg
    base = generate_scenario(grid, cfg, None, 1).stream
    sc = generate_scenario(grid, cfg, Leak(grid.edges[0].id, 19.0, onset), 1).stream
    ref, test = window_pair(sc, onset)
    assert np.array_equal(ref.values, window_pair(base, onset)[0].values)
    assert np.all(test.values[cfg.ramp_samples:] < window_pair(base, onset)[1].values[cfg.ramp_samples:])


def test_lag_matrix_examples():
    X, y = lag_matrix(make_stream([1.0, 2.0, 3.0, 4.0]), LagSpec((1,)))
    assert X.tolist() == [[1.0], [2.0], [3.0]] and y.tolist() == [2.0, 3.0, 4.0]
    X, y = lag_matrix(make_stream(np.full(50, 7.0)), LagSpec((1, 3, 5)))
    assert np.all(X == 7.0) and np.all(y == 7.0)
    X, y = lag_matrix(make_stream(np.zeros(3 * WEEK)), LagSpec())
    assert X.shape == (21 * DAY - 1344, 4) and len(y) == 21 * DAY - 1344
    with pytest.raises(SizeError):
        lag_matrix(make_stream(np.zeros(1344)), LagSpec())


def test_lag_matrix_rows_align_with_time(rng):
    x = rng.normal(size=2000)
    X, y = lag_matrix(make_stream(x), LagSpec())
    t = 1344 + 17
    assert y[17] == x[t]
    assert X[17].tolist() == [x[t - 1], x[t - 96], x[t - 672], x[t - 1344]]


def test_lag_spec_validation():
    assert LagSpec().lags == DEFAULT_LAGS == (1, 96, 672, 1344)
    assert LagSpec.full().lags == tuple(range(1, 1345))
    for bad in [(), (0,), (1, 1), (-2,)]:
        with pytest.raises(ValueError):
            LagSpec(bad)
