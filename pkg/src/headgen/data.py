"""Orientation traces, window blocks and their on-disk formats.

All angles are degrees and the axis order is always (yaw, pitch, roll).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

AXES = ("yaw", "pitch", "roll")
CSV_HEADER = ["timestamp", "yaw", "pitch", "roll"]
ARCHIVE_FORMAT = "headgen.windowset/1"


class TraceFormatError(ValueError):
    """The file does not have the expected column layout."""


class TraceValidationError(ValueError):
    """The file parses but its content violates a trace invariant."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def check_angle(value: float, kind: str = "free") -> float:
    """Validate one angle. ``kind`` is ``"free"``, ``"wrapped"`` or ``"pitch"``."""
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"angle must be finite, got {value}")
    if kind == "wrapped" and not -180.0 <= value < 180.0:
        raise ValueError(f"wrapped angle {value} outside [-180, 180)")
    if kind == "pitch" and not -90.0 <= value <= 90.0:
        raise ValueError(f"pitch {value} outside [-90, 90]")
    return value


@dataclass(frozen=True)
class Trace:
    """One subject's uniformly sampled yaw/pitch/roll series."""

    subject_id: str
    rate_hz: float
    samples: np.ndarray  # (M, 3)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != 3:
            raise ValueError(f"samples must have shape (M, 3), got {s.shape}")
        if s.shape[0] == 0:
            raise TraceValidationError("empty trace")
        if not self.rate_hz > 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        if not np.all(np.isfinite(s)):
            raise TraceValidationError("trace contains non-finite values")
        object.__setattr__(self, "samples", _frozen(s))
        object.__setattr__(self, "rate_hz", float(self.rate_hz))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def yaw(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def pitch(self) -> np.ndarray:
        return self.samples[:, 1]

    @property
    def roll(self) -> np.ndarray:
        return self.samples[:, 2]

    def with_samples(self, samples: np.ndarray, rate_hz: float | None = None) -> "Trace":
        return Trace(self.subject_id, self.rate_hz if rate_hz is None else rate_hz, samples)


@dataclass(frozen=True)
class TraceSet:
    traces: tuple[Trace, ...]
    provenance: str = ""

    def __post_init__(self):
        traces = tuple(self.traces)
        if not traces:
            raise ValueError("TraceSet needs at least one trace")
        rates = {t.rate_hz for t in traces}
        if len(rates) != 1:
            raise ValueError(f"traces disagree on rate_hz: {sorted(rates)}")
        object.__setattr__(self, "traces", traces)

    @property
    def rate_hz(self) -> float:
        return self.traces[0].rate_hz

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)


@dataclass(frozen=True)
class WindowSet:
    """A block of windows, shape (N, L, 3)."""

    data: np.ndarray
    rate_hz: float
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 3:
            raise ValueError(f"window block must have shape (N, L, 3), got {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 2:
            raise ValueError(f"need N >= 1 windows of length L >= 2, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("window block contains non-finite values")
        if not self.rate_hz > 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        object.__setattr__(self, "data", _frozen(d))
        object.__setattr__(self, "rate_hz", float(self.rate_hz))

    @property
    def n_windows(self) -> int:
        return self.data.shape[0]

    @property
    def window_len(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.data.shape[0]


def load_trace_csv(path: str | Path, rate_hz: float, subject_id: str | None = None) -> Trace:
    """Read a ``timestamp,yaw,pitch,roll`` CSV file.

    Timestamps must be strictly increasing; they are checked and then dropped.
    Row numbers in error messages count data rows from 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceFormatError(f"{path}: missing header") from None
        header = [h.strip() for h in header]
        if header != CSV_HEADER:
            raise TraceFormatError(f"{path}: expected header {','.join(CSV_HEADER)}, got {','.join(header)}")
        stamps, rows = [], []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != 4:
                raise TraceFormatError(f"{path}: row {i} has {len(row)} columns, expected 4")
            try:
                vals = [float(v) for v in row]
            except ValueError as e:
                raise TraceFormatError(f"{path}: row {i}: {e}") from None
            bad = [CSV_HEADER[j] for j, v in enumerate(vals) if not math.isfinite(v)]
            if bad:
                raise TraceValidationError(f"{path}: row {i}: non-finite {', '.join(bad)}")
            if stamps and vals[0] <= stamps[-1]:
                raise TraceValidationError(f"{path}: row {i}: timestamps not strictly increasing")
            stamps.append(vals[0])
            rows.append(vals[1:])
    if not rows:
        raise TraceValidationError(f"{path}: empty trace")
    return Trace(subject_id or path.stem, rate_hz, np.array(rows))


def save_trace_csv(trace: Trace, path: str | Path) -> None:
    """Write a trace with synthetic timestamps ``i / rate_hz``."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for i, (y, p, r) in enumerate(trace.samples):
            w.writerow([repr(i / trace.rate_hz), repr(float(y)), repr(float(p)), repr(float(r))])


def load_trace_set(paths: Sequence[str | Path], rate_hz: float, provenance: str = "") -> TraceSet:
    return TraceSet(tuple(load_trace_csv(p, rate_hz) for p in paths), provenance)


def validate_trace(t: Trace) -> list[str]:
    """Soft checks on angle ranges and rollovers; returns human-readable warnings."""
    warnings = []
    if np.any((t.pitch < -90) | (t.pitch > 90)):
        n = int(np.sum((t.pitch < -90) | (t.pitch > 90)))
        warnings.append(f"pitch out of range [-90, 90] at {n} samples")
    for name, col in (("yaw", t.yaw), ("roll", t.roll)):
        out = (col < -180) | (col >= 180)
        if np.any(out):
            warnings.append(f"{name} out of range [-180, 180) at {int(out.sum())} samples")
    jumps = np.flatnonzero(np.abs(np.diff(t.yaw)) > 300)
    if jumps.size:
        warnings.append(f"possible rollover in yaw at {jumps.size} steps (first at sample {int(jumps[0]) + 1})")
    return warnings


def save_windows(ws: WindowSet, directory: str | Path, extra: dict[str, Any] | None = None) -> Path:
    """Write a window archive: ``manifest.json`` plus a raw little-endian float64 block."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    block = np.ascontiguousarray(ws.data, dtype="<f8")
    manifest = {
        "format": ARCHIVE_FORMAT,
        "shape": list(block.shape),
        "rate_hz": ws.rate_hz,
        "axis_order": list(AXES),
        "dtype": "<f8",
        "order": "window-major, step-major, axis-minor",
        "meta": {**ws.meta, **(extra or {})},
    }
    (directory / "data.bin").write_bytes(block.tobytes())
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_windows(directory: str | Path) -> WindowSet:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no window archive at {directory}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != ARCHIVE_FORMAT:
        raise ValueError(f"{directory}: unsupported archive format {manifest.get('format')!r}")
    if manifest.get("axis_order") != list(AXES):
        raise ValueError(f"{directory}: unexpected axis order {manifest.get('axis_order')}")
    shape = tuple(manifest["shape"])
    raw = (directory / "data.bin").read_bytes()
    expected = 8 * int(np.prod(shape))
    if len(raw) != expected:
        raise ValueError(f"{directory}: data.bin has {len(raw)} bytes, manifest implies {expected}")
    data = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    return WindowSet(data, manifest["rate_hz"], manifest.get("meta", {}))
