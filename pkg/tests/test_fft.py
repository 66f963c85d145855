import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from headgen.data import Trace, TraceSet, WindowSet
from headgen.fft import (PsdModel, baseline_windows, energy_fraction_below, estimate_mean_psd, fft, ifft,
                         largest_power_of_two, next_power_of_two, periodogram, random_phase_series,
                         synthesize_traces)
from headgen.metrics import velocity_crosscorrelation
from headgen.preprocess import PreprocessConfig


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10), st.integers(0, 2 ** 31 - 1))
def test_fft_matches_numpy_and_round_trips(k, seed):
    n = 2 ** k
    x = np.random.default_rng(seed).normal(size=n)
    X = fft(x)
    np.testing.assert_allclose(X, np.fft.fft(x), atol=1e-9 * max(1, n))
    np.testing.assert_allclose(ifft(X).real, x, atol=1e-9)
    assert abs(np.sum(np.abs(X) ** 2) / n - np.sum(x ** 2)) <= 1e-9 * np.sum(x ** 2) + 1e-300
    np.testing.assert_allclose(X[1:][::-1], np.conj(X[1:]), atol=1e-9)


def test_fft_examples():
    assert np.allclose(fft(np.eye(1, 16)[0]), 1.0)
    n, k = 64, 5
    X = fft(np.cos(2 * np.pi * k * np.arange(n) / n))
    mags = np.abs(X)
    assert set(np.flatnonzero(mags > 1e-9)) == {k, n - k}
    assert np.allclose(fft([1.0, 2.0, 3.0], 8), np.fft.fft([1, 2, 3], 8))
    for bad in (3, 12, 0):
        with pytest.raises(ValueError):
            fft(np.zeros(2), bad)
    with pytest.raises(ValueError):
        fft(np.zeros(9), 8)
    with pytest.raises(ValueError):
        ifft(np.zeros(6))


def test_power_of_two_helpers():
    assert largest_power_of_two(30000) == 16384
    assert next_power_of_two(30000) == 32768
    assert next_power_of_two(16384) == 16384
    assert largest_power_of_two(1) == 1


def test_periodogram_matches_scipy_convention():
    from scipy.signal import periodogram as sp_periodogram

    x = np.random.default_rng(0).normal(size=256)
    f, p = sp_periodogram(x, fs=50.0, detrend=False, window="boxcar", scaling="density")
    np.testing.assert_allclose(periodogram(x, 50.0), p, rtol=1e-10, atol=1e-14)


def sine_trace(freq, n=16384, rate=250.0, amp=10.0, offset=(0.0, 0.0, 0.0)):
    t = np.arange(n) / rate
    s = amp * np.sin(2 * np.pi * freq * t)
    return Trace(f"sin{freq}", rate, np.column_stack([s + offset[0], s + offset[1], s + offset[2]]))


def test_sinusoid_psd_peak():
    m = estimate_mean_psd(TraceSet((sine_trace(2.0),)), 16384)
    k = int(np.argmax(m.psd[0]))
    assert m.freqs[k] == pytest.approx(2.0, abs=m.rate_hz / m.analysis_len)
    far = np.abs(np.arange(m.psd.shape[1]) - k) > 2
    assert m.psd[0, k] > 100 * m.psd[0, far].max()
    assert energy_fraction_below(m, 5.0)[0] > 0.99
    assert energy_fraction_below(m, m.rate_hz / 2).tolist() == pytest.approx([1.0, 1.0, 1.0])
    ten = estimate_mean_psd(TraceSet((sine_trace(10.0),)), 16384)
    assert energy_fraction_below(ten, 5.0)[0] < 0.01
    with pytest.raises(ValueError):
        energy_fraction_below(m, 0.0)
    with pytest.raises(ValueError):
        energy_fraction_below(m, 200.0)


def test_white_noise_psd_flat():
    rng = np.random.default_rng(1)
    ts = TraceSet(tuple(Trace(f"n{i}", 100.0, rng.normal(size=(1024, 3))) for i in range(50)))
    m = estimate_mean_psd(ts)
    inner = m.psd[:, 1:-1]
    level = inner.mean(axis=1, keepdims=True)
    # averaging 50 chi-square(2) periodograms leaves ~14% per-bin noise
    assert np.max(np.abs(inner / level - 1)) < 0.7
    assert np.mean(np.abs(inner / level - 1) < 0.3) > 0.95


def test_psd_means_and_errors():
    ts = TraceSet((sine_trace(2.0, n=2048, offset=(5, -3, 1)), sine_trace(3.0, n=4096, offset=(7, -1, 1))))
    m = estimate_mean_psd(ts)
    assert m.analysis_len == 2048
    want = np.mean([t.samples.mean(axis=0) for t in ts], axis=0)
    np.testing.assert_allclose(m.means, want, rtol=1e-12)
    with pytest.raises(ValueError, match="sin2.0"):
        estimate_mean_psd(ts, 4096)
    with pytest.raises(ValueError):
        estimate_mean_psd(ts, 1000)
    rev = estimate_mean_psd(TraceSet(ts.traces[::-1]))
    np.testing.assert_allclose(rev.psd, m.psd, rtol=1e-12)


def test_psd_ignores_yaw_rollover():
    t = np.arange(4096) / 250.0
    yaw = 170 + 30 * np.sin(2 * np.pi * 0.5 * t)
    wrapped = (yaw + 180) % 360 - 180
    a = estimate_mean_psd(TraceSet((Trace("a", 250.0, np.column_stack([wrapped, yaw * 0, yaw * 0])),)))
    b = estimate_mean_psd(TraceSet((Trace("a", 250.0, np.column_stack([yaw, yaw * 0, yaw * 0])),)))
    np.testing.assert_allclose(a.psd[0], b.psd[0], rtol=1e-9, atol=1e-12)


def test_random_phase_series_exact_psd():
    psd = np.random.default_rng(2).uniform(0, 1, 129)
    x, residue = random_phase_series(psd, 256, 20.0, np.random.default_rng(3), return_residue=True)
    assert residue < 1e-9
    np.testing.assert_allclose(periodogram(x, 20.0), psd, rtol=1e-9, atol=1e-12)


def test_psd_model_file_round_trip(tmp_path):
    m = estimate_mean_psd(TraceSet((sine_trace(2.0, n=1024),)))
    m.save(tmp_path / "psd.json")
    back = PsdModel.load(tmp_path / "psd.json")
    assert np.array_equal(back.psd, m.psd) and np.array_equal(back.means, m.means)
    with pytest.raises(ValueError):
        PsdModel(np.zeros((3, 10)), 32, 1.0, np.zeros(3))
    with pytest.raises(ValueError):
        PsdModel(-np.ones((3, 17)), 32, 1.0, np.zeros(3))


def toy_model(n=1024):
    from headgen.toy import head_like_traces
    return estimate_mean_psd(head_like_traces(4, 4096, seed=3), n)


def test_synthesis_shapes_and_determinism():
    m = toy_model()
    a = synthesize_traces(m, 3, 1000, seed=5)
    b = synthesize_traces(m, 3, 1000, seed=5)
    c = synthesize_traces(m, 3, 1000, seed=6)
    assert len(a) == 3 and len(a.traces[0]) == 1000
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))
    assert not np.array_equal(a.traces[0].samples, c.traces[0].samples)
    # per-trace seeds: the first trace does not depend on how many are drawn
    assert np.array_equal(synthesize_traces(m, 1, 1000, seed=5).traces[0].samples, a.traces[0].samples)
    longer = synthesize_traces(m, 1, 3000, seed=5)
    assert len(longer.traces[0]) == 3000
    with pytest.raises(ValueError):
        synthesize_traces(m, 0, 10)


def test_raw_axes_uncorrelated_for_flat_spectrum():
    # the 3/sqrt(n) bound presumes roughly independent samples, so use a flat spectrum
    n = 4096
    m = PsdModel(np.ones((3, n // 2 + 1)), n, 250.0, np.zeros(3))
    for t in synthesize_traces(m, 10, n, seed=0):
        c = np.corrcoef(t.samples.T)
        assert np.all(np.abs(c[np.triu_indices(3, 1)]) < 3 / np.sqrt(n))


def test_synthesized_axes_independent():
    m = toy_model(4096)
    ts = synthesize_traces(m, 10, 4096, seed=0)
    w = WindowSet(np.stack([t.samples[:4000].reshape(-1, 25, 3) for t in ts]).reshape(-1, 25, 3), 250.0)
    for a, b in ((0, 1), (0, 2), (1, 2)):
        assert np.all(np.abs(velocity_crosscorrelation(w, a, b, 10, absolute=False).values) < 0.05)


def test_baseline_windows_shape():
    m = toy_model()
    w = baseline_windows(m, PreprocessConfig(15, 25, 1), n_traces=2, seed=0, out_len=3000)
    assert w.data.shape == (2 * (200 - 25 + 1), 25, 3)
    assert w.rate_hz == pytest.approx(250 / 15)
    again = baseline_windows(m, PreprocessConfig(15, 25, 1), n_traces=2, seed=0, out_len=3000)
    assert np.array_equal(w.data, again.data)
