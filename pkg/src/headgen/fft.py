"""Spectral baseline generator.

The mean power spectral density of the source traces is estimated per axis
and new traces are drawn by giving each frequency bin the model magnitude
and a uniformly random phase. Axes are synthesised independently, so the
baseline reproduces per-axis spectra but no coupling between axes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import AXES, Trace, TraceSet, WindowSet
from .preprocess import PreprocessConfig, make_windows, unwrap_angles


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _radix2(x: np.ndarray, inverse: bool) -> np.ndarray:
    """Iterative decimation-in-time FFT over the last axis (length a power of two)."""
    n = x.shape[-1]
    levels = n.bit_length() - 1
    # bit-reversal permutation
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(levels):
        rev |= ((idx >> b) & 1) << (levels - 1 - b)
    a = np.asarray(x, dtype=np.complex128)[..., rev].copy()
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        a = a.reshape(*a.shape[:-1], n // size, size)
        even = a[..., :half].copy()
        odd = a[..., half:] * tw
        a[..., :half] = even + odd
        a[..., half:] = even - odd
        a = a.reshape(*a.shape[:-2], n)
        size *= 2
    return a


def fft(signal, n: int | None = None) -> np.ndarray:
    """DFT of a real or complex sequence, zero-padded to ``n`` (a power of two)."""
    x = np.asarray(signal)
    n = x.shape[-1] if n is None else n
    if not is_power_of_two(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    if x.shape[-1] > n:
        raise ValueError(f"signal of length {x.shape[-1]} does not fit in n={n}")
    if x.shape[-1] < n:
        pad = [(0, 0)] * (x.ndim - 1) + [(0, n - x.shape[-1])]
        x = np.pad(x, pad)
    return _radix2(x, inverse=False)


def ifft(spectrum) -> np.ndarray:
    X = np.asarray(spectrum)
    n = X.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    return _radix2(X, inverse=True) / n


def largest_power_of_two(n: int) -> int:
    if n < 1:
        raise ValueError("length must be positive")
    return 1 << (n.bit_length() - 1)


def next_power_of_two(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def _one_sided_weights(n: int) -> np.ndarray:
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


def periodogram(x: np.ndarray, rate_hz: float) -> np.ndarray:
    """One-sided periodogram (power per Hz) over the last axis; length must be a power of two."""
    n = x.shape[-1]
    X = fft(x)[..., :n // 2 + 1]
    return _one_sided_weights(n) * (X.real ** 2 + X.imag ** 2) / (rate_hz * n)


@dataclass(frozen=True)
class PsdModel:
    psd: np.ndarray  # (3, analysis_len // 2 + 1)
    analysis_len: int
    rate_hz: float
    means: np.ndarray  # (3,)

    def __post_init__(self):
        psd = np.asarray(self.psd, dtype=np.float64)
        if psd.shape != (3, self.analysis_len // 2 + 1):
            raise ValueError(f"PSD shape {psd.shape} does not match analysis length {self.analysis_len}")
        if np.any(psd < 0):
            raise ValueError("PSD values must be non-negative")
        object.__setattr__(self, "psd", psd)
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.analysis_len // 2 + 1) * self.rate_hz / self.analysis_len

    def to_dict(self) -> dict:
        return {"rate_hz": self.rate_hz, "analysis_len": self.analysis_len,
                "axis_order": list(AXES), "means": self.means.tolist(), "psd": self.psd.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PsdModel":
        return cls(np.array(d["psd"]), int(d["analysis_len"]), float(d["rate_hz"]), np.array(d["means"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PsdModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def estimate_mean_psd(ts: TraceSet, analysis_len: int | None = None) -> PsdModel:
    """Average the per-trace periodograms of the first ``analysis_len`` mean-removed samples.

    Traces are unwrapped first so rollovers do not leak broadband power.
    Defaults to the largest power of two that fits the shortest trace.
    """
    if analysis_len is None:
        analysis_len = largest_power_of_two(min(len(t) for t in ts))
    if not is_power_of_two(analysis_len):
        raise ValueError(f"analysis length must be a power of two, got {analysis_len}")
    short = [t.subject_id for t in ts if len(t) < analysis_len]
    if short:
        raise ValueError(f"traces shorter than {analysis_len} samples: {', '.join(short)}")
    unwrapped = [np.stack([unwrap_angles(t.samples[:, a]) for a in range(3)]) for t in ts]
    segs = np.stack([u[:, :analysis_len] for u in unwrapped])  # (n, 3, L)
    means = np.stack([u.mean(axis=1) for u in unwrapped]).mean(axis=0)
    segs = segs - segs.mean(axis=2, keepdims=True)
    psd = periodogram(segs, ts.rate_hz).mean(axis=0)
    return PsdModel(psd, analysis_len, ts.rate_hz, means)


def energy_fraction_below(model: PsdModel, f_hz: float) -> np.ndarray:
    """Share of non-DC power at frequencies <= ``f_hz``, per axis."""
    nyquist = model.rate_hz / 2
    if not 0 < f_hz <= nyquist:
        raise ValueError(f"frequency must lie in (0, {nyquist}], got {f_hz}")
    freqs = model.freqs
    p = model.psd[:, 1:]
    total = p.sum(axis=1)
    below = p[:, freqs[1:] <= f_hz].sum(axis=1)
    return np.divide(below, total, out=np.zeros(3), where=total > 0)


def _psd_on_grid(model: PsdModel, n: int) -> np.ndarray:
    if n == model.analysis_len:
        return model.psd
    f = np.arange(n // 2 + 1) * model.rate_hz / n
    return np.stack([np.interp(f, model.freqs, model.psd[a]) for a in range(3)])


def random_phase_series(psd: np.ndarray, n: int, rate_hz: float, rng: np.random.Generator,
                        return_residue: bool = False):
    """One real series of length ``n`` whose periodogram equals ``psd`` exactly."""
    mags = np.sqrt(psd * rate_hz * n / _one_sided_weights(n))
    phases = rng.uniform(0.0, 2 * np.pi, size=mags.size)
    half = mags * np.exp(1j * phases)
    half[0] = mags[0]
    half[-1] = mags[-1]  # Nyquist bin real
    full = np.concatenate([half, np.conj(half[-2:0:-1])])
    x = ifft(full)
    if return_residue:
        return x.real, float(np.max(np.abs(x.imag)))
    return x.real


def synthesize_traces(model: PsdModel, n_traces: int, out_len: int, seed: int = 0) -> TraceSet:
    """Random-phase surrogates of the model spectrum, one independent draw per axis.

    Series are generated at ``max(analysis_len, next_pow2(out_len))`` samples
    (the PSD is interpolated when that is longer) and cropped to ``out_len``.
    """
    if n_traces < 1 or out_len < 1:
        raise ValueError("n_traces and out_len must be positive")
    n = max(model.analysis_len, next_power_of_two(out_len))
    psd = _psd_on_grid(model, n)
    traces = []
    for i in range(n_traces):
        rng = np.random.default_rng([seed, i])
        cols = [random_phase_series(psd[a], n, model.rate_hz, rng)[:out_len] + model.means[a]
                for a in range(3)]
        traces.append(Trace(f"fft{i:03d}", model.rate_hz, np.column_stack(cols)))
    return TraceSet(tuple(traces), f"fft baseline seed={seed}")


def baseline_windows(model: PsdModel, cfg: PreprocessConfig = PreprocessConfig(), n_traces: int = 18,
                     seed: int = 0, out_len: int = 30000) -> WindowSet:
    """Synthesize full-length traces and window them like the real data."""
    ws = make_windows(synthesize_traces(model, n_traces, out_len, seed), cfg)
    return WindowSet(ws.data, ws.rate_hz, {**ws.meta, "generator": "fft", "seed": seed})
