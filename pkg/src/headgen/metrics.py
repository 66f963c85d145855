"""Head-rotation comparison metrics between a real and a synthetic window set.

Orientation and range distributions are 10-degree histograms; velocity
auto- and cross-correlations are averaged per window; PCA gives a 2-D view.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .data import AXES, WindowSet
from .preprocess import wrap_angles

AXIS_PAIRS = tuple(combinations(range(3), 2))


def _axis_index(axis) -> int:
    if isinstance(axis, str):
        return AXES.index(axis)
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1, 2 or one of {AXES}, got {axis!r}")
    return int(axis)


@dataclass(frozen=True)
class Histogram:
    """Normalised histogram on a regular grid.

    Bucket ``i`` covers ``[origin + i*width, origin + (i+1)*width)`` for the
    integer ``indices``; orientation histograms use ``origin = -width/2`` so
    the middle bucket is centred on zero.
    """

    bucket_width: float
    origin: float
    indices: np.ndarray
    masses: np.ndarray
    count: int

    @property
    def centers(self) -> np.ndarray:
        return self.origin + (self.indices + 0.5) * self.bucket_width

    @property
    def lefts(self) -> np.ndarray:
        return self.origin + self.indices * self.bucket_width

    def to_dict(self) -> dict:
        return {"bucket_width": self.bucket_width, "origin": self.origin,
                "indices": self.indices.tolist(), "masses": self.masses.tolist(),
                "count": self.count}

    @classmethod
    def from_dict(cls, d: dict) -> "Histogram":
        return cls(d["bucket_width"], d["origin"], np.array(d["indices"], dtype=np.int64),
                   np.array(d["masses"], dtype=np.float64), d["count"])

    def aligned(self, lo: int, hi: int) -> "Histogram":
        """The same histogram on the bucket index range ``lo..hi`` (inclusive)."""
        idx = np.arange(lo, hi + 1)
        masses = np.zeros(idx.size)
        masses[self.indices - lo] = self.masses
        return Histogram(self.bucket_width, self.origin, idx, masses, self.count)


def _histogram(values: np.ndarray, width: float, origin: float) -> Histogram:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot histogram an empty set")
    b = np.floor((values - origin) / width).astype(np.int64)
    lo, hi = int(b.min()), int(b.max())
    counts = np.bincount(b - lo, minlength=hi - lo + 1).astype(np.float64)
    return Histogram(float(width), float(origin), np.arange(lo, hi + 1), counts / values.size, int(values.size))


def orientation_histogram(w: WindowSet, axis, bucket_width: float = 10.0) -> Histogram:
    """Every step of every window as one data point; yaw and roll wrapped first."""
    a = _axis_index(axis)
    values = w.data[:, :, a]
    if a != 1:
        values = wrap_angles(values)
    return _histogram(values, bucket_width, -bucket_width / 2)


def window_ranges(w: WindowSet, axis) -> np.ndarray:
    a = _axis_index(axis)
    x = w.data[:, :, a]
    return x.max(axis=1) - x.min(axis=1)


def range_distribution(w: WindowSet, axis, bucket_width: float = 10.0) -> Histogram:
    """Histogram of per-window max - min, buckets starting at [0, width)."""
    return _histogram(window_ranges(w, axis), bucket_width, 0.0)


def histogram_l1(a: Histogram, b: Histogram) -> float:
    if a.bucket_width != b.bucket_width or a.origin != b.origin:
        raise ValueError("histograms use incompatible bucket grids")
    lo = int(min(a.indices.min(), b.indices.min()))
    hi = int(max(a.indices.max(), b.indices.max()))
    return float(np.abs(a.aligned(lo, hi).masses - b.aligned(lo, hi).masses).sum())


@dataclass(frozen=True)
class CorrelationCurve:
    values: np.ndarray  # index = lag in steps, 0..max_lag
    contributing: int
    skipped: int

    @property
    def lags(self) -> np.ndarray:
        return np.arange(self.values.size)

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "contributing": self.contributing,
                "skipped": self.skipped}

    @classmethod
    def from_dict(cls, d: dict) -> "CorrelationCurve":
        return cls(np.array(d["values"], dtype=np.float64), d["contributing"], d["skipped"])


def _check_lag(w: WindowSet, max_lag: int) -> None:
    if max_lag < 0 or w.window_len < max_lag + 2:
        raise ValueError(f"max_lag={max_lag} needs windows of at least {max_lag + 2} steps, "
                         f"got {w.window_len}")


def velocity_autocorrelation(w: WindowSet, axis, max_lag: int = 10) -> CorrelationCurve:
    """Mean over windows of the normalised autocorrelation of ``diff(x)``."""
    _check_lag(w, max_lag)
    v = np.diff(w.data[:, :, _axis_index(axis)], axis=1)
    v = v - v.mean(axis=1, keepdims=True)
    denom = np.sum(v * v, axis=1)
    keep = denom > 0
    n = int(keep.sum())
    values = np.zeros(max_lag + 1)
    if n:
        v, denom = v[keep], denom[keep]
        m = v.shape[1]
        values[0] = 1.0
        for k in range(1, max_lag + 1):
            values[k] = np.mean(np.sum(v[:, :m - k] * v[:, k:], axis=1) / denom)
    else:
        values[:] = np.nan
    return CorrelationCurve(values, n, int(w.n_windows - n))


def _pearson_rows(a: np.ndarray, b: np.ndarray):
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    saa = np.sum(a * a, axis=1)
    sbb = np.sum(b * b, axis=1)
    ok = (saa > 0) & (sbb > 0)
    r = np.full(a.shape[0], np.nan)
    r[ok] = np.sum(a[ok] * b[ok], axis=1) / np.sqrt(saa[ok] * sbb[ok])
    return r, ok


def velocity_crosscorrelation(w: WindowSet, axis_a, axis_b, max_lag: int = 10,
                              absolute: bool = True) -> CorrelationCurve:
    """Pearson correlation between velocity of ``axis_a`` at t and ``axis_b`` at t + k.

    With ``absolute`` (default) speeds rather than signed velocities are used.
    Windows where either velocity series is constant are skipped.
    """
    ia, ib = _axis_index(axis_a), _axis_index(axis_b)
    if ia == ib:
        raise ValueError("cross-correlation needs two different axes")
    _check_lag(w, max_lag)
    va = np.diff(w.data[:, :, ia], axis=1)
    vb = np.diff(w.data[:, :, ib], axis=1)
    if absolute:
        va, vb = np.abs(va), np.abs(vb)
    m = va.shape[1]
    _, ok = _pearson_rows(va, vb)
    n = int(ok.sum())
    values = np.full(max_lag + 1, np.nan)
    if n:
        va, vb = va[ok], vb[ok]
        for k in range(max_lag + 1):
            r, rok = _pearson_rows(va[:, :m - k], vb[:, k:])
            # overlapping segments can still be constant; those windows drop out at that lag
            values[k] = np.mean(r[rok]) if rok.any() else np.nan
    return CorrelationCurve(values, n, int(w.n_windows - n))


@dataclass(frozen=True)
class PcaProjection:
    components: np.ndarray  # (2, D) orthonormal rows
    explained_variance: np.ndarray  # (2,)
    mean: np.ndarray
    real: np.ndarray  # (n, 2)
    synthetic: np.ndarray  # (n, 2)

    def to_rows(self) -> list[tuple[str, float, float]]:
        rows = [("real", float(x), float(y)) for x, y in self.real]
        rows += [("synthetic", float(x), float(y)) for x, y in self.synthetic]
        return rows


def pca_fit_project(real: WindowSet, synthetic: WindowSet, sample_n: int = 1000,
                    seed: int = 0) -> PcaProjection:
    """Top-2 principal directions of equal-size subsamples of both sets, pooled."""
    if sample_n < 1:
        raise ValueError("sample_n must be positive")
    if sample_n > real.n_windows or sample_n > synthetic.n_windows:
        raise ValueError(f"sample_n={sample_n} exceeds a set size "
                         f"({real.n_windows} real, {synthetic.n_windows} synthetic)")
    rng = np.random.default_rng(seed)
    xr = real.data[np.sort(rng.choice(real.n_windows, sample_n, replace=False))].reshape(sample_n, -1)
    xs = synthetic.data[np.sort(rng.choice(synthetic.n_windows, sample_n, replace=False))].reshape(sample_n, -1)
    pooled = np.vstack([xr, xs])
    mean = pooled.mean(axis=0)
    centred = pooled - mean
    cov = centred.T @ centred / max(pooled.shape[0] - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:2]
    comps = evecs[:, order].T
    # deterministic sign: largest-magnitude loading positive
    signs = np.sign(comps[np.arange(comps.shape[0]), np.argmax(np.abs(comps), axis=1)])
    comps = comps * np.where(signs == 0, 1.0, signs)[:, None]
    return PcaProjection(comps, evals[order], mean, (xr - mean) @ comps.T, (xs - mean) @ comps.T)


# -- report ---------------------------------------------------------------

@dataclass
class MetricsReport:
    orientation: dict[str, tuple[Histogram, Histogram]]
    ranges: dict[str, tuple[Histogram, Histogram]]
    autocorrelation: dict[str, tuple[CorrelationCurve, CorrelationCurve]]
    crosscorrelation: dict[str, tuple[CorrelationCurve, CorrelationCurve]]
    pca: PcaProjection | None = None
    scalars: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def pair(d):
            return {k: {"real": a.to_dict(), "synthetic": b.to_dict()} for k, (a, b) in d.items()}

        out = {
            "orientation": pair(self.orientation),
            "ranges": pair(self.ranges),
            "autocorrelation": pair(self.autocorrelation),
            "crosscorrelation": pair(self.crosscorrelation),
            "scalars": dict(self.scalars),
        }
        if self.pca is not None:
            out["pca"] = {
                "components": self.pca.components.tolist(),
                "explained_variance": self.pca.explained_variance.tolist(),
                "mean": self.pca.mean.tolist(),
                "real": self.pca.real.tolist(),
                "synthetic": self.pca.synthetic.tolist(),
            }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        def pair(section, kind):
            return {k: (kind.from_dict(v["real"]), kind.from_dict(v["synthetic"]))
                    for k, v in section.items()}

        pca = None
        if "pca" in d:
            p = d["pca"]
            pca = PcaProjection(np.array(p["components"]), np.array(p["explained_variance"]),
                                np.array(p["mean"]), np.array(p["real"]).reshape(-1, 2),
                                np.array(p["synthetic"]).reshape(-1, 2))
        return cls(pair(d["orientation"], Histogram), pair(d["ranges"], Histogram),
                   pair(d["autocorrelation"], CorrelationCurve),
                   pair(d["crosscorrelation"], CorrelationCurve), pca, dict(d["scalars"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "MetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _align(a: Histogram, b: Histogram) -> tuple[Histogram, Histogram]:
    lo = int(min(a.indices.min(), b.indices.min()))
    hi = int(max(a.indices.max(), b.indices.max()))
    return a.aligned(lo, hi), b.aligned(lo, hi)


def pair_name(ia: int, ib: int) -> str:
    return f"{AXES[ia]}-{AXES[ib]}"


def compare_datasets(real: WindowSet, synthetic: WindowSet, bucket_width: float = 10.0,
                     max_lag: int = 10, pca_samples: int | None = 1000, seed: int = 0,
                     absolute_velocity: bool = True) -> MetricsReport:
    if real.window_len != synthetic.window_len:
        raise ValueError(f"window lengths differ: {real.window_len} vs {synthetic.window_len}")
    if abs(real.rate_hz - synthetic.rate_hz) > 1e-9 * real.rate_hz:
        raise ValueError(f"rates differ: {real.rate_hz} vs {synthetic.rate_hz}")
    orientation, ranges, auto, cross, scalars = {}, {}, {}, {}, {}
    for a, name in enumerate(AXES):
        orientation[name] = _align(orientation_histogram(real, a, bucket_width),
                                   orientation_histogram(synthetic, a, bucket_width))
        ranges[name] = _align(range_distribution(real, a, bucket_width),
                              range_distribution(synthetic, a, bucket_width))
        auto[name] = (velocity_autocorrelation(real, a, max_lag),
                      velocity_autocorrelation(synthetic, a, max_lag))
        scalars[f"orientation_l1.{name}"] = histogram_l1(*orientation[name])
        scalars[f"range_l1.{name}"] = histogram_l1(*ranges[name])
        dev = np.abs(auto[name][0].values[1:] - auto[name][1].values[1:])
        scalars[f"autocorr_mad.{name}"] = float(np.mean(dev))
    for ia, ib in AXIS_PAIRS:
        key = pair_name(ia, ib)
        cross[key] = (velocity_crosscorrelation(real, ia, ib, max_lag, absolute_velocity),
                      velocity_crosscorrelation(synthetic, ia, ib, max_lag, absolute_velocity))
        scalars[f"crosscorr_lag0_diff.{key}"] = float(cross[key][1].values[0] - cross[key][0].values[0])
        scalars[f"crosscorr_mad.{key}"] = float(np.mean(np.abs(cross[key][1].values - cross[key][0].values)))
    pca = None
    if pca_samples:
        n = min(pca_samples, real.n_windows, synthetic.n_windows)
        pca = pca_fit_project(real, synthetic, n, seed)
    return MetricsReport(orientation, ranges, auto, cross, pca, scalars)


def snapshot_score(real: WindowSet, synthetic: WindowSet, bucket_width: float = 10.0,
                   max_lag: int = 10) -> dict[str, float]:
    """Scalar used to rank snapshots: histogram L1s plus autocorrelation deviation."""
    parts = {}
    for a, name in enumerate(AXES):
        parts[f"orientation_l1.{name}"] = histogram_l1(orientation_histogram(real, a, bucket_width),
                                                       orientation_histogram(synthetic, a, bucket_width))
        parts[f"range_l1.{name}"] = histogram_l1(range_distribution(real, a, bucket_width),
                                                 range_distribution(synthetic, a, bucket_width))
        ra = velocity_autocorrelation(real, a, max_lag).values[1:]
        sa = velocity_autocorrelation(synthetic, a, max_lag).values[1:]
        parts[f"autocorr_mad.{name}"] = float(np.mean(np.abs(ra - sa)))
    parts["score"] = float(sum(parts.values()))
    return parts
