"""Static SVG figures for comparison reports.

Every figure is 800x500 (SVG points) and overlays the real dataset with one
or more synthetic ones.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import AXES  # noqa: E402
from .metrics import MetricsReport, pair_name, AXIS_PAIRS  # noqa: E402

FIGSIZE = (800 / 72, 500 / 72)
REAL_STYLE = {"color": "black", "lw": 2.0}
PALETTE = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple")

plt.rcParams.update({
    "svg.hashsalt": "headgen",  # stable element ids, so reruns give identical files
    "font.size": 11,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
})


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _hist_plot(path, title, xlabel, real_hist, synth: dict):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.step(real_hist.centers, real_hist.masses, where="mid", label="real", **REAL_STYLE)
    for (label, h), color in zip(synth.items(), PALETTE):
        ax.step(h.centers, h.masses, where="mid", label=label, color=color)
    ax.set(title=title, xlabel=xlabel, ylabel="probability")
    ax.legend()
    return _save(fig, path)


def _curve_plot(path, title, real_curve, synth: dict, ylabel):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(real_curve.lags, real_curve.values, marker="o", label="real", **REAL_STYLE)
    for (label, c), color in zip(synth.items(), PALETTE):
        ax.plot(c.lags, c.values, marker="o", color=color, label=label)
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set(title=title, xlabel="lag (steps)", ylabel=ylabel, ylim=(-1.05, 1.05))
    ax.legend()
    return _save(fig, path)


def render_report(reports: dict[str, MetricsReport], out_dir: str | Path) -> list[Path]:
    """Write the 14 comparison figures; ``reports`` maps a synthetic label to its report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    first = next(iter(reports.values()))
    paths = []
    for name in AXES:
        paths.append(_hist_plot(out / f"orientation_{name}.svg", f"{name} distribution", f"{name} (deg)",
                                first.orientation[name][0],
                                {k: r.orientation[name][1] for k, r in reports.items()}))
    for name in AXES:
        paths.append(_hist_plot(out / f"range_{name}.svg", f"per-window {name} range", "range (deg)",
                                first.ranges[name][0], {k: r.ranges[name][1] for k, r in reports.items()}))
    for name in AXES:
        paths.append(_curve_plot(out / f"autocorr_{name}.svg", f"{name} velocity autocorrelation",
                                 first.autocorrelation[name][0],
                                 {k: r.autocorrelation[name][1] for k, r in reports.items()},
                                 "autocorrelation"))
    for ia, ib in AXIS_PAIRS:
        key = pair_name(ia, ib)
        paths.append(_curve_plot(out / f"crosscorr_{key}.svg", f"{key} velocity cross-correlation",
                                 first.crosscorrelation[key][0],
                                 {k: r.crosscorrelation[key][1] for k, r in reports.items()},
                                 "cross-correlation"))
    paths.append(_pca_plot(out / "pca.svg", reports))
    paths.append(_summary_plot(out / "summary.svg", reports))
    return paths


def _pca_plot(path, reports):
    n = len(reports)
    fig, axes = plt.subplots(1, n, figsize=FIGSIZE, squeeze=False)
    for ax, ((label, r), color) in zip(axes[0], zip(reports.items(), PALETTE)):
        if r.pca is None:
            ax.text(0.5, 0.5, "no PCA", ha="center", transform=ax.transAxes)
            continue
        ax.scatter(r.pca.real[:, 0], r.pca.real[:, 1], s=4, alpha=0.4, color="black", label="real")
        ax.scatter(r.pca.synthetic[:, 0], r.pca.synthetic[:, 1], s=4, alpha=0.4, color=color, label=label)
        ax.set(title=f"PCA: real vs {label}", xlabel="PC1", ylabel="PC2")
        ax.legend(markerscale=3)
    return _save(fig, path)


def _summary_plot(path, reports):
    keys = [k for k in next(iter(reports.values())).scalars if k.startswith(("orientation_l1", "range_l1",
                                                                               "autocorr_mad"))]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    width = 0.8 / len(reports)
    x = np.arange(len(keys))
    for i, ((label, r), color) in enumerate(zip(reports.items(), PALETTE)):
        ax.bar(x + i * width, [r.scalars[k] for k in keys], width, label=label, color=color)
    ax.set_xticks(x + width * (len(reports) - 1) / 2, keys, rotation=35, ha="right", fontsize=8)
    ax.set(title="distance to real data (lower is better)", ylabel="value")
    ax.legend()
    return _save(fig, path)


def render_error_cdf(errors: dict[int, np.ndarray], path: str | Path, clip: float = 0.5) -> Path:
    """CDF of decimate-then-spline errors per factor, errors above ``clip`` dropped."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for factor, err in sorted(errors.items()):
        e = np.sort(err.ravel())
        e = e[e <= clip]
        if e.size:
            ax.plot(e, np.arange(1, e.size + 1) / err.size, label=f"factor {factor}")
    ax.set(title="decimation + cubic spline reconstruction error", xlabel="absolute error (deg)",
           ylabel="CDF", xlim=(0, clip))
    ax.legend()
    return _save(fig, Path(path))
