"""Synthetic stand-ins for head-rotation data, used in tests and demos."""

from __future__ import annotations

import numpy as np

from .data import Trace, TraceSet, WindowSet


def toy_windows(n: int = 2000, length: int = 25, rate_hz: float = 250 / 15, max_freq: float = 2.0,
                noise: float = 0.05, seed: int = 0) -> WindowSet:
    """Windows of sinusoidal motion with amplitudes correlated across axes.

    Each window draws one frequency in (0.1, max_freq] Hz shared by all axes,
    an independent phase per axis and a base amplitude that scales all three
    axes (yaw largest, roll smallest). Degrees throughout.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(length) / rate_hz
    freq = rng.uniform(0.1, max_freq, size=(n, 1, 1))
    phase = rng.uniform(0, 2 * np.pi, size=(n, 1, 3))
    base = rng.uniform(5.0, 60.0, size=(n, 1, 1))
    scale = np.array([1.0, 0.4, 0.2]) * rng.uniform(0.8, 1.2, size=(n, 1, 3))
    offset = rng.normal(0.0, 1.0, size=(n, 1, 3)) * np.array([20.0, 5.0, 2.0])
    x = offset + base * scale * np.sin(2 * np.pi * freq * t[None, :, None] + phase)
    x += rng.normal(0.0, noise, size=x.shape)
    return WindowSet(x, rate_hz, {"provenance": f"toy sinusoids seed={seed}"})


def head_like_traces(n_traces: int = 18, length: int = 30000, rate_hz: float = 250.0,
                     seed: int = 0, coupled: bool = True) -> TraceSet:
    """Smooth random orientation traces with a low-pass (mostly < 1 Hz) spectrum.

    Built from a shared slow driver so the axes move together when
    ``coupled``; yaw wanders over a wide range and wraps at +/-180.
    """
    rng = np.random.default_rng(seed)
    freqs = np.fft.rfftfreq(length, 1 / rate_hz)
    shape = 1.0 / (1.0 + (freqs / 0.3) ** 4)
    shape[0] = 0.0

    def smooth_noise():
        spec = shape * (rng.normal(size=freqs.size) + 1j * rng.normal(size=freqs.size))
        x = np.fft.irfft(spec, n=length)
        return x / x.std()

    traces = []
    for i in range(n_traces):
        driver = smooth_noise()
        mix = 0.7 if coupled else 0.0
        yaw = 90.0 * (mix * driver + (1 - mix) * smooth_noise()) + rng.uniform(-180, 180)
        pitch = 15.0 * (mix * driver + (1 - mix) * smooth_noise())
        roll = 5.0 * (mix * driver + (1 - mix) * smooth_noise())
        yaw = (yaw + 180.0) % 360.0 - 180.0
        traces.append(Trace(f"toy{i:02d}", rate_hz, np.column_stack([yaw, np.clip(pitch, -90, 90), roll])))
    return TraceSet(tuple(traces), f"head-like toy traces seed={seed}")
