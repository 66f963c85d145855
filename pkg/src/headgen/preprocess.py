"""Trace preparation: unwrapping, decimation, spline fidelity analysis,
windowing and the reversible quantile-to-normal transform."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import ndtr

from .data import AXES, Trace, TraceSet, WindowSet

CDF_BOUND = 1e-7


@dataclass(frozen=True)
class PreprocessConfig:
    downsample_factor: int = 15
    window_len: int = 25
    window_stride: int = 1

    def __post_init__(self):
        if self.downsample_factor < 1:
            raise ValueError("downsample_factor must be >= 1")
        if self.window_len < 2:
            raise ValueError("window_len must be >= 2")
        if self.window_stride < 1:
            raise ValueError("window_stride must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


# -- angles ---------------------------------------------------------------

def unwrap_angles(series) -> np.ndarray:
    """Shift the remainder of the series by 360 deg whenever a step exceeds 180 deg."""
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot unwrap an empty series")
    steps = np.diff(x)
    # per-step correction: the multiple of 360 bringing the step into (-180, 180]
    corr = np.where(np.abs(steps) > 180.0, -360.0 * np.ceil((steps - 180.0) / 360.0), 0.0)
    out = np.empty_like(x)
    out[0] = x[0]
    # corrections are exact multiples of 360, so no drift accumulates
    out[1:] = x[1:] + np.cumsum(corr)
    return out


def wrap_angles(series) -> np.ndarray:
    """Map degrees into [-180, 180)."""
    x = np.asarray(series, dtype=np.float64)
    return x - 360.0 * np.floor((x + 180.0) / 360.0)


# -- resampling -----------------------------------------------------------

def downsample(t: Trace, factor: int) -> Trace:
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    if factor == 1:
        return t
    return t.with_samples(t.samples[::factor], t.rate_hz / factor)


def spline_upsample(t: Trace, factor: int) -> Trace:
    """Natural cubic spline through the samples, evaluated ``factor`` times denser.

    The output spans the input knots only, so it has ``(M - 1) * factor + 1`` samples.
    """
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    m = len(t)
    if m < 4:
        raise ValueError(f"cubic spline needs at least 4 samples, got {m}")
    knots = np.arange(m, dtype=np.float64)
    spline = CubicSpline(knots, t.samples, axis=0, bc_type="natural")
    fine = np.arange((m - 1) * factor + 1) / factor
    out = spline(fine)
    out[::factor] = t.samples  # exact at the knots
    return t.with_samples(out, t.rate_hz * factor)


def downsampling_error_cdf(t: Trace, factors, quantiles=(50, 90, 99, 100)) -> list[dict]:
    """Absolute reconstruction error after decimate-then-spline, per factor and axis.

    Returns one row per (factor, axis) with the requested error percentiles,
    ``100`` being the maximum.
    """
    rows = []
    for factor in factors:
        if factor < 2:
            raise ValueError(f"factors must be >= 2, got {factor}")
        up = spline_upsample(downsample(t, factor), factor)
        n = len(up)
        err = np.abs(up.samples - t.samples[:n])
        for a, name in enumerate(AXES):
            q = np.percentile(err[:, a], quantiles)
            rows.append({"factor": int(factor), "axis": name, "n": n,
                         **{f"p{int(p)}": float(v) for p, v in zip(quantiles, q)}})
    return rows


def downsampling_errors(t: Trace, factor: int) -> np.ndarray:
    """Raw absolute errors (n, 3) for one factor, for CDF plots."""
    up = spline_upsample(downsample(t, factor), factor)
    return np.abs(up.samples - t.samples[:len(up)])


# -- windowing ------------------------------------------------------------

def prepare_trace(t: Trace, factor: int) -> Trace:
    unwrapped = np.column_stack([unwrap_angles(t.samples[:, a]) for a in range(3)])
    return downsample(t.with_samples(unwrapped), factor)


def sliding_windows(samples: np.ndarray, length: int, stride: int) -> np.ndarray:
    m = samples.shape[0]
    starts = np.arange(0, m - length + 1, stride)
    idx = starts[:, None] + np.arange(length)[None, :]
    return samples[idx]


def make_windows(ts: TraceSet, cfg: PreprocessConfig = PreprocessConfig()) -> WindowSet:
    """Unwrap, decimate and cut every trace into overlapping windows."""
    blocks, skipped = [], []
    rate = None
    for t in ts:
        prepared = prepare_trace(t, cfg.downsample_factor)
        rate = prepared.rate_hz
        if len(prepared) < cfg.window_len:
            warnings.warn(f"trace {t.subject_id!r} has {len(prepared)} samples after "
                          f"downsampling, fewer than window_len={cfg.window_len}; skipped")
            skipped.append(t.subject_id)
            continue
        blocks.append(sliding_windows(prepared.samples, cfg.window_len, cfg.window_stride))
    if not blocks:
        raise ValueError("every trace is shorter than the window length")
    return WindowSet(np.concatenate(blocks), rate, {"preprocess": cfg.to_dict(),
                                                   "provenance": ts.provenance, "skipped": skipped})


# -- inverse normal CDF ---------------------------------------------------

# Acklam's rational approximation, relative error ~1.15e-9 before refinement.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _acklam(p: np.ndarray) -> np.ndarray:
    x = np.empty_like(p)
    lo = p < _P_LOW
    hi = p > 1 - _P_LOW
    mid = ~(lo | hi)
    if np.any(mid):
        q = p[mid] - 0.5
        r = q * q
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1
        x[mid] = num / den
    for mask, sign, tail in ((lo, 1.0, p[lo]), (hi, -1.0, 1 - p[hi])):
        if np.any(mask):
            q = np.sqrt(-2 * np.log(tail))
            num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
            den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1
            x[mask] = sign * num / den
    return x


def inverse_normal_cdf(p):
    """Standard normal quantile function, vectorised.

    Acklam's approximation followed by one Halley step against ``ndtr``.
    Evaluated on the lower half and mirrored so the refinement never
    subtracts two numbers close to one.
    """
    arr = np.asarray(p, dtype=np.float64)
    if np.any(~((arr > 0) & (arr < 1))):
        raise ValueError("inverse_normal_cdf needs probabilities strictly inside (0, 1)")
    upper = arr > 0.5
    low = np.where(upper, 1.0 - arr, arr)
    x = _acklam(np.atleast_1d(low))
    e = ndtr(x) - np.atleast_1d(low)
    u = e * np.sqrt(2 * np.pi) * np.exp(0.5 * x * x)
    x = x - u / (1 + 0.5 * x * u)
    x = np.where(np.atleast_1d(upper), -x, x)
    if np.ndim(p) == 0:
        return float(x[0])
    return x.reshape(arr.shape)


# -- quantile transform ---------------------------------------------------

@dataclass(frozen=True)
class TransformParams:
    """Per-axis quantile tables plus the range bounds of the normal scores."""

    references: np.ndarray  # (3, Q) sorted values per axis
    probabilities: np.ndarray  # (Q,) strictly inside (0, 1)
    lower: np.ndarray  # (3,) min normal score on training data
    upper: np.ndarray  # (3,)

    def __post_init__(self):
        refs = np.asarray(self.references, dtype=np.float64)
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if refs.ndim != 2 or refs.shape[0] != 3 or refs.shape[1] != probs.shape[0]:
            raise ValueError("quantile table shape mismatch")
        if np.any(np.diff(refs, axis=1) < 0):
            raise ValueError("reference values must be non-decreasing")
        if np.any(probs <= 0) or np.any(probs >= 1):
            raise ValueError("probabilities must lie strictly inside (0, 1)")
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if np.any(lo >= hi):
            raise ValueError("range bounds need lower < upper per axis")
        for name, v in (("references", refs), ("probabilities", probs), ("lower", lo), ("upper", hi)):
            v = v.copy()
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def quantile_count(self) -> int:
        return self.probabilities.shape[0]

    def to_dict(self) -> dict:
        return {
            "quantile_count": self.quantile_count,
            "axis_order": list(AXES),
            "probabilities": self.probabilities.tolist(),
            "references": self.references.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformParams":
        return cls(np.array(d["references"]), np.array(d["probabilities"]),
                   np.array(d["lower"]), np.array(d["upper"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TransformParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _to_probability(x: np.ndarray, refs: np.ndarray, probs: np.ndarray) -> np.ndarray:
    # averaging the forward and reversed interpolation puts tied references at their middle rank
    fwd = np.interp(x, refs, probs)
    bwd = -np.interp(-x, -refs[::-1], -probs[::-1])
    return np.clip(0.5 * (fwd + bwd), CDF_BOUND, 1 - CDF_BOUND)


def _normal_scores(values: np.ndarray, p: TransformParams) -> np.ndarray:
    out = np.empty_like(values)
    for a in range(3):
        prob = _to_probability(values[..., a], p.references[a], p.probabilities)
        out[..., a] = inverse_normal_cdf(prob)
    return out


def fit_transform(w: WindowSet, quantile_count: int = 1000) -> TransformParams:
    """Fit the per-axis quantile table over every value of every window."""
    pooled = w.data.reshape(-1, 3)
    if pooled.shape[0] < quantile_count:
        raise ValueError(f"need at least {quantile_count} values per axis, got {pooled.shape[0]}")
    if quantile_count < 2:
        raise ValueError("quantile_count must be >= 2")
    levels = np.linspace(0.0, 1.0, quantile_count)
    refs = np.quantile(pooled, levels, axis=0).T
    for a in range(3):
        if refs[a, -1] <= refs[a, 0]:
            raise ValueError(f"degenerate axis {AXES[a]}: zero spread")
    refs = np.maximum.accumulate(refs, axis=1)
    probs = np.clip(levels, CDF_BOUND, 1 - CDF_BOUND)
    scaffold = TransformParams(refs, probs, np.full(3, -1.0), np.full(3, 1.0))
    scores = _normal_scores(pooled, scaffold)
    return TransformParams(refs, probs, scores.min(axis=0), scores.max(axis=0))


def normal_scores(w: WindowSet, p: TransformParams) -> np.ndarray:
    """Quantile-transformed values before range scaling."""
    return _normal_scores(w.data, p)


def apply_transform(w: WindowSet, p: TransformParams) -> WindowSet:
    scores = _normal_scores(w.data, p)
    scaled = np.clip((scores - p.lower) / (p.upper - p.lower), 0.0, 1.0)
    return WindowSet(scaled, w.rate_hz, {**w.meta, "transformed": True})


def invert_array(u: np.ndarray, p: TransformParams) -> tuple[np.ndarray, int]:
    """Invert the transform on a raw (..., 3) array; returns (degrees, clamped count)."""
    u = np.asarray(u, dtype=np.float64)
    outside = (u < 0) | (u > 1)
    clamped = int(outside.sum())
    u = np.clip(u, 0.0, 1.0)
    z = p.lower + u * (p.upper - p.lower)
    prob = ndtr(z)
    out = np.empty_like(z)
    for a in range(3):
        out[..., a] = np.interp(prob[..., a], p.probabilities, p.references[a])
    return out, clamped


def invert_transform(w: WindowSet, p: TransformParams) -> WindowSet:
    out, clamped = invert_array(w.data, p)
    meta = {k: v for k, v in w.meta.items() if k != "transformed"}
    meta["clamped_values"] = clamped
    return WindowSet(out, w.rate_hz, meta)
