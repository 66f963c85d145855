"""Scaled-down end-to-end experiments used for acceptance checks.

Results are cached on disk keyed by the experiment settings and a hash of the
package sources, so a rerun against unchanged code reuses the finished run.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

from .data import AXES, load_windows
from .metrics import compare_datasets
from .preprocess import apply_transform, fit_transform
from .timegan import ModelConfig, TimeGan, Trainer, TrainSchedule, select_snapshot
from .toy import toy_windows

THRESHOLDS = {"orientation_l1": 0.15, "range_l1": 0.25, "autocorr_mad": 0.15, "crosscorr_lag0": 0.2}


@dataclass(frozen=True)
class ToySettings:
    n_windows: int = 2000
    data_seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: TrainSchedule = field(default_factory=lambda: TrainSchedule(300, 300, 500))

    def to_dict(self) -> dict:
        return {"n_windows": self.n_windows, "data_seed": self.data_seed,
                "model": self.model.to_dict(), "schedule": self.schedule.to_dict()}


_DEPENDS = ("data", "preprocess", "nn", "timegan", "metrics", "toy", "experiments")


def source_digest() -> str:
    h = hashlib.sha256()
    for p in (Path(__file__).parent / f"{m}.py" for m in _DEPENDS):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def cache_root() -> Path:
    return Path(os.environ.get("HEADGEN_CACHE", Path.home() / ".cache" / "headgen"))


def toy_fidelity(settings: ToySettings = ToySettings(), cache: Path | None = None) -> dict:
    """Train on the toy set, pick the best snapshot and score it against the thresholds."""
    key = hashlib.sha256(json.dumps({"settings": settings.to_dict(), "source": source_digest()},
                                    sort_keys=True).encode()).hexdigest()[:16]
    run_dir = (cache or cache_root()) / f"toy_fidelity_{key}"
    result_path = run_dir / "result.json"
    if result_path.is_file():
        return json.loads(result_path.read_text())
    if run_dir.exists():
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True)

    real = toy_windows(settings.n_windows, seed=settings.data_seed)
    params = fit_transform(real)
    t0 = time.perf_counter()
    trainer = Trainer(TimeGan(settings.model, seed=settings.schedule.seed), apply_transform(real, params),
                      settings.schedule, params, run_dir)
    trainer.run()
    train_s = time.perf_counter() - t0
    best, table = select_snapshot(run_dir / "snapshots", real)
    synth = load_windows(run_dir / "snapshots" / best / "windows")
    report = compare_datasets(real, synth, pca_samples=None)
    s = report.scalars
    checks = {}
    for a in AXES:
        checks[f"orientation_l1.{a}"] = (s[f"orientation_l1.{a}"], THRESHOLDS["orientation_l1"])
        checks[f"range_l1.{a}"] = (s[f"range_l1.{a}"], THRESHOLDS["range_l1"])
        checks[f"autocorr_mad.{a}"] = (s[f"autocorr_mad.{a}"], THRESHOLDS["autocorr_mad"])
    for k, v in s.items():
        if k.startswith("crosscorr_lag0_diff."):
            checks[k] = (abs(v), THRESHOLDS["crosscorr_lag0"])
    result = {
        "settings": settings.to_dict(),
        "best_snapshot": best,
        "score_table": table,
        "checks": {k: {"value": v, "limit": lim, "ok": bool(v < lim)} for k, (v, lim) in checks.items()},
        "passed": all(v < lim for v, lim in checks.values()),
        "train_seconds": train_s,
        "embedding_final_mse": trainer.losses["embedding"][-1]["reconstruction"] if trainer.losses["embedding"] else None,
        "d_loss_min_epoch_mean": min((r["d_loss"] for r in trainer.losses["joint"]), default=None),
    }
    result_path.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result
