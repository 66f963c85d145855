import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from headgen.data import Trace, TraceSet, WindowSet
from headgen.preprocess import (PreprocessConfig, TransformParams, apply_transform, downsample,
                                downsampling_error_cdf, fit_transform, invert_transform, inverse_normal_cdf,
                                make_windows, normal_scores, spline_upsample, unwrap_angles, wrap_angles)

mpmath.mp.dps = 40


def phi_inv_oracle(p: float) -> float:
    return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(p) - 1))


@pytest.mark.parametrize("x, expected", [
    ([179, -179, -178], [179, 181, 182]),
    ([10, 20, 30], [10, 20, 30]),
    ([-170, 170, -170], [-170, -190, -170]),
])
def test_unwrap_examples(x, expected):
    assert unwrap_angles(x).tolist() == expected


@pytest.mark.parametrize("x, expected", [(190, -170), (-180, -180), (540, -180)])
def test_wrap_examples(x, expected):
    assert wrap_angles(x) == expected


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-180, 179.999, allow_nan=False), min_size=1, max_size=60))
def test_unwrap_properties(xs):
    x = np.array(xs)
    u = unwrap_angles(x)
    assert u[0] == x[0]
    assert np.all(np.abs(np.diff(u)) <= 180)
    assert np.all(np.isclose((u - x) / 360, np.round((u - x) / 360), atol=1e-9))
    np.testing.assert_allclose(wrap_angles(u), x, atol=1e-9)


def test_unwrap_empty():
    with pytest.raises(ValueError):
        unwrap_angles([])


def trace(samples, rate=250.0):
    return Trace("t", rate, np.asarray(samples, dtype=float))


def test_downsample_examples():
    t = trace(np.zeros((30000, 3)))
    d = downsample(t, 15)
    assert len(d) == 2000
    assert d.rate_hz == pytest.approx(16.6667, abs=1e-4)
    ten = trace(np.arange(30).reshape(10, 3))
    assert downsample(ten, 3).samples[:, 0].tolist() == [0, 9, 18, 27]
    assert downsample(ten, 1) is ten
    with pytest.raises(ValueError):
        downsample(ten, 0)


def test_spline_linear_and_knots():
    ramp = trace(np.column_stack([np.arange(20.0) * 2 - 5, np.arange(20.0), -np.arange(20.0)]))
    up = spline_upsample(ramp, 7)
    assert len(up) == 19 * 7 + 1
    fine = np.arange(len(up)) / 7
    np.testing.assert_allclose(up.samples[:, 1], fine, atol=1e-9)
    assert np.array_equal(up.samples[::7], ramp.samples)
    with pytest.raises(ValueError):
        spline_upsample(trace(np.zeros((3, 3))), 2)


def test_spline_sine_reconstruction():
    t = np.arange(30000) / 250.0
    s = np.sin(2 * np.pi * 2.0 * t)
    tr = trace(np.column_stack([s, s, s]))
    up = spline_upsample(downsample(tr, 15), 15)
    err = np.abs(up.samples[:, 0] - s[:len(up)])
    assert err.max() < 0.05


def test_error_cdf_constant_and_rows():
    rows = downsampling_error_cdf(trace(np.full((300, 3), 7.0)), [2, 5])
    assert len(rows) == 6
    assert all(r[k] == 0 for r in rows for k in ("p50", "p90", "p99", "p100"))
    with pytest.raises(ValueError):
        downsampling_error_cdf(trace(np.zeros((30, 3))), [1])


def test_make_windows_counts():
    ts = TraceSet((trace(np.zeros((2000, 3)), 16.0),))
    assert make_windows(ts, PreprocessConfig(1, 25, 1)).n_windows == 1976
    ts = TraceSet((trace(np.zeros((25, 3)), 16.0),))
    assert make_windows(ts, PreprocessConfig(1, 25, 1)).n_windows == 1
    ts = TraceSet((trace(np.zeros((30000, 3))),))
    w = make_windows(ts, PreprocessConfig(15, 25, 3))
    assert w.n_windows == (2000 - 25) // 3 + 1
    assert w.rate_hz == pytest.approx(250 / 15)


def test_make_windows_skips_short_traces():
    long = Trace("long", 1.0, np.zeros((30, 3)))
    short = Trace("short", 1.0, np.zeros((10, 3)))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        w = make_windows(TraceSet((long, short)), PreprocessConfig(1, 25, 1))
    assert w.n_windows == 6
    assert w.meta["skipped"] == ["short"]
    assert any("short" in str(c.message) for c in caught)
    with pytest.warns(UserWarning), pytest.raises(ValueError):
        make_windows(TraceSet((short,)), PreprocessConfig(1, 25, 1))


def test_make_windows_unwraps_before_decimation():
    # yaw crossing the rollover every few samples; decimated by 4
    yaw = wrap_angles(170 + np.arange(40) * 3.0)
    ts = TraceSet((Trace("a", 4.0, np.column_stack([yaw, np.zeros(40), np.zeros(40)])),))
    w = make_windows(ts, PreprocessConfig(4, 5, 1))
    assert np.all(np.diff(w.data[:, :, 0], axis=1) == 12.0)


@pytest.mark.parametrize("p", [0.5, 0.975, 0.02425, 0.97725, 1e-7, 1 - 1e-7, 0.3, 1e-3, 0.999])
def test_inverse_normal_cdf_oracle(p):
    assert abs(inverse_normal_cdf(p) - phi_inv_oracle(p)) < 1e-8


def test_inverse_normal_cdf_examples():
    assert inverse_normal_cdf(0.5) == 0.0
    assert round(inverse_normal_cdf(0.975), 6) == 1.959964
    ps = np.random.default_rng(0).uniform(1e-6, 1 - 1e-6, 1000)
    np.testing.assert_allclose(inverse_normal_cdf(1 - ps), -inverse_normal_cdf(ps), atol=1e-9)
    oracle = np.array([phi_inv_oracle(p) for p in ps[:200]])
    assert np.max(np.abs(inverse_normal_cdf(ps[:200]) - oracle)) < 1e-8
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            inverse_normal_cdf(bad)
    assert inverse_normal_cdf(np.array([[0.5, 0.975]])).shape == (1, 2)


def uniform_windows(n=400, seed=0):
    rng = np.random.default_rng(seed)
    return WindowSet(rng.uniform(0, 1, size=(n, 25, 3)) * [1, 30, 200] + [0, -10, 50], 16.0)


def test_fit_transform_median_and_tail():
    w = uniform_windows()
    p = fit_transform(w)
    pooled = w.data.reshape(-1, 3)
    med = np.median(pooled, axis=0)
    z = normal_scores(WindowSet(np.tile(med, (1, 2, 1)), 1.0), p)
    np.testing.assert_allclose(z[0, 0], 0.0, atol=5e-3)
    q = np.quantile(pooled, 0.97725, axis=0)
    z = normal_scores(WindowSet(np.tile(q, (1, 2, 1)), 1.0), p)
    np.testing.assert_allclose(z[0, 0], 2.0, atol=0.02)
    scaled = apply_transform(w, p).data.reshape(-1, 3)
    np.testing.assert_allclose(scaled.min(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(scaled.max(axis=0), 1.0, atol=1e-12)


def test_normality_of_scores():
    rng = np.random.default_rng(3)
    skewed = WindowSet(np.stack([rng.exponential(5, (800, 25)), rng.normal(0, 3, (800, 25)) ** 3,
                                 rng.uniform(-20, 20, (800, 25))], axis=-1), 16.0)
    z = normal_scores(skewed, fit_transform(skewed)).reshape(-1, 3)
    c = z - z.mean(axis=0)
    s = (c ** 3).mean(axis=0) / (c ** 2).mean(axis=0) ** 1.5
    k = (c ** 4).mean(axis=0) / (c ** 2).mean(axis=0) ** 2 - 3
    assert np.all(np.abs(s) < 0.1)
    assert np.all(np.abs(k) < 0.3)


def test_degenerate_axis():
    d = np.zeros((100, 25, 3))
    d[..., 0] = np.random.default_rng(0).normal(size=(100, 25))
    with pytest.raises(ValueError, match="degenerate axis"):
        fit_transform(WindowSet(d, 1.0))


def test_clamping_and_inverse():
    w = uniform_windows()
    p = fit_transform(w)
    far = WindowSet(np.array([[[1e6, 1e6, 1e6], [-1e6, -1e6, -1e6]]]), 1.0)
    t = apply_transform(far, p).data
    assert np.all(t[0, 0] == 1.0) and np.all(t[0, 1] == 0.0)
    back = invert_transform(WindowSet(np.full((1, 2, 3), 1.3), 1.0), p)
    assert back.meta["clamped_values"] == 6
    np.testing.assert_allclose(back.data[0, 0], p.references[:, -1])


def test_transform_monotone_and_round_trip():
    w = uniform_windows()
    p = fit_transform(w)
    lo, hi = p.references[:, 0], p.references[:, -1]
    grid = np.linspace(lo, hi, 5001)[1:-1]
    t = apply_transform(WindowSet(grid[None], 1.0), p).data[0]
    assert np.all(np.diff(t, axis=0) >= 0)
    back = invert_transform(WindowSet(t[None], 1.0), p).data[0]
    assert np.max(np.abs(back - grid)) < 1e-6


def test_transform_params_serialization(tmp_path):
    p = fit_transform(uniform_windows())
    p.save(tmp_path / "t.json")
    q = TransformParams.load(tmp_path / "t.json")
    for name in ("references", "probabilities", "lower", "upper"):
        assert np.array_equal(getattr(p, name), getattr(q, name))
    assert q.quantile_count == 1000
