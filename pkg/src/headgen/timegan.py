"""TimeGAN on numpy: embedder, recovery, generator, supervisor and discriminator.

Training runs in three phases: autoencoder (embedder + recovery), supervised
next-step prediction in latent space, then joint adversarial training that
periodically emits snapshots (checkpoint + generated windows).
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import WindowSet, load_windows, save_windows
from .metrics import snapshot_score
from .nn import Adam, SequenceNet, bce_with_logits, mse
from .preprocess import TransformParams, invert_array

log = logging.getLogger(__name__)

NETWORKS = ("embedder", "recovery", "generator", "supervisor", "discriminator")
CHECKPOINT_MAGIC = b"HGCKPT\r\n"
CHECKPOINT_VERSION = 1
PHASES = ("embedding", "supervised", "joint", "done")
MOMENT_EPS = 1e-6


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None = None):
        super().__init__(message if checkpoint is None else f"{message} (diagnostic checkpoint: {checkpoint})")
        self.checkpoint = checkpoint


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    seq_len: int = 25
    feature_dim: int = 3
    hidden_dim: int = 18
    num_layers: int = 3
    latent_dim: int = 18
    noise_dim: int = 3
    supervisor_activation: str = "sigmoid"
    learning_rate: float = 0.001
    # joint-phase loss weights
    gamma: float = 1.0
    supervised_weight: float = 100.0
    moment_weight: float = 100.0
    reconstruction_weight: float = 10.0
    embedder_supervised_weight: float = 0.1
    discriminator_threshold: float = 0.15
    # also show the raw generator latents (before the supervisor) to the discriminator
    discriminate_unsupervised: bool = True
    clip_norm: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainSchedule:
    epochs_embedding: int = 1250
    epochs_supervised: int = 1250
    epochs_joint: int = 1250
    batch_size: int = 128
    snapshot_every: int = 10
    snapshot_multiplier: int = 10
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs_embedding, self.epochs_supervised, self.epochs_joint) < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 1 or self.snapshot_every < 1 or self.snapshot_multiplier < 1:
            raise ValueError("batch_size, snapshot_every and snapshot_multiplier must be positive")

    def snapshot_epochs(self) -> list[int]:
        """Joint-phase epochs after which a snapshot is taken."""
        epochs = list(range(self.snapshot_every, self.epochs_joint + 1, self.snapshot_every))
        if not epochs or epochs[-1] != self.epochs_joint:
            epochs.append(self.epochs_joint)
        return epochs

    def to_dict(self) -> dict:
        return asdict(self)


class TimeGan:
    """The five sub-networks and their optimizer states."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = c = config
        rng = np.random.default_rng([seed, 0x7167])
        sup_layers = max(c.num_layers - 1, 1)
        self.nets: dict[str, SequenceNet] = {
            "embedder": SequenceNet(c.feature_dim, c.hidden_dim, c.num_layers, c.latent_dim, "sigmoid", rng),
            "recovery": SequenceNet(c.latent_dim, c.hidden_dim, c.num_layers, c.feature_dim, "sigmoid", rng),
            "generator": SequenceNet(c.noise_dim, c.hidden_dim, c.num_layers, c.latent_dim, "sigmoid", rng),
            "supervisor": SequenceNet(c.latent_dim, c.hidden_dim, sup_layers, c.latent_dim,
                                      c.supervisor_activation, rng),
            "discriminator": SequenceNet(c.latent_dim, c.hidden_dim, c.num_layers, 1, "identity", rng),
        }
        self.optimizers: dict[str, Adam] = {
            name: Adam(learning_rate=c.learning_rate, clip_norm=c.clip_norm)
            for name in ("embedding", "supervised", "generator", "joint_embedding", "discriminator")
        }

    def __getattr__(self, name):
        nets = self.__dict__.get("nets", {})
        if name in nets:
            return nets[name]
        raise AttributeError(name)

    def params(self, *names: str) -> dict[str, np.ndarray]:
        names = names or NETWORKS
        return {f"{n}.{k}": v for n in names for k, v in self.nets[n].params.items()}

    def set_params(self, params: Mapping[str, np.ndarray]) -> None:
        grouped: dict[str, dict] = {}
        for key, v in params.items():
            net, rest = key.split(".", 1)
            grouped.setdefault(net, {})[rest] = v
        for net, p in grouped.items():
            self.nets[net].set_params(p)

    def update(self, optimizer: str, grads: dict[str, np.ndarray]) -> None:
        names = sorted({k.split(".", 1)[0] for k in grads})
        self.set_params(self.optimizers[optimizer].step(self.params(*names), grads))

    # -- losses. Each returns (loss, grads for the trained networks, parts) --

    def embedding_loss(self, x: np.ndarray):
        E, R = self.nets["embedder"], self.nets["recovery"]
        h, ce = E.forward(x)
        xt, cr = R.forward(h)
        loss, dxt = mse(xt, x)
        gr, dh = R.backward(cr, dxt)
        ge, _ = E.backward(ce, dh)
        return loss, _prefixed(embedder=ge, recovery=gr), {"reconstruction": loss}

    def supervised_loss(self, x: np.ndarray):
        E, S = self.nets["embedder"], self.nets["supervisor"]
        h = E(x)
        hs, cs = S.forward(h)
        loss, d = mse(hs[:, :-1], h[:, 1:])
        dhs = np.zeros_like(hs)
        dhs[:, :-1] = d
        gs, _ = S.backward(cs, dhs)
        return loss, _prefixed(supervisor=gs), {"supervised": loss}

    def generator_loss(self, x: np.ndarray, z: np.ndarray, h: np.ndarray | None = None):
        """Adversarial + supervised + moment loss for generator and supervisor.

        ``h`` may pass a precomputed ``embedder(x)``; it does not depend on
        the parameters being trained here.
        """
        c = self.config
        E, R, G, S, D = (self.nets[n] for n in NETWORKS)
        if h is None:
            h = E(x)
        B = z.shape[0]
        e_hat, cg = G.forward(z)
        # generated and real latents share one supervisor pass
        s_out, cs = S.forward(np.concatenate([e_hat, h]))
        h_hat, hs = s_out[:B], s_out[B:]
        x_hat, cr = R.forward(h_hat)
        d_in = np.concatenate([h_hat, e_hat]) if c.discriminate_unsupervised else h_hat
        y, cd = D.forward(d_in)
        adv, dy = bce_with_logits(y[:B], 1.0)
        loss = adv
        dys = [dy]
        if c.discriminate_unsupervised:
            adv_e, dye = bce_with_logits(y[B:], 1.0)
            loss += c.gamma * adv_e
            dys.append(c.gamma * dye)
        _, dd = D.backward(cd, np.concatenate(dys))
        dh_hat = dd[:B]
        moment, dx_hat = _moment_loss(x_hat, x)
        loss += c.moment_weight * moment
        _, dh_r = R.backward(cr, c.moment_weight * dx_hat)
        dh_hat = dh_hat + dh_r
        sup, dsup = mse(hs[:, :-1], h[:, 1:])
        root = math.sqrt(sup)
        loss += c.supervised_weight * root
        dhs = np.zeros_like(hs)
        dhs[:, :-1] = dsup * (c.supervised_weight * 0.5 / max(root, 1e-12))
        gs, ds = S.backward(cs, np.concatenate([dh_hat, dhs]))
        de_hat = ds[:B]
        if c.discriminate_unsupervised:
            de_hat = de_hat + dd[B:]
        gg, _ = G.backward(cg, de_hat)
        return loss, _prefixed(generator=gg, supervisor=gs), {
            "adversarial": adv, "supervised": sup, "moment": moment}

    def joint_embedding_loss(self, x: np.ndarray):
        c = self.config
        E, R, S = self.nets["embedder"], self.nets["recovery"], self.nets["supervisor"]
        h, ce = E.forward(x)
        xt, cr = R.forward(h)
        rec, drec = mse(xt, x)
        root = math.sqrt(rec)
        gr, dh_rec = R.backward(cr, drec * (c.reconstruction_weight * 0.5 / max(root, 1e-12)))
        hs, cs = S.forward(h)
        sup, dsup = mse(hs[:, :-1], h[:, 1:])
        w = c.embedder_supervised_weight
        dhs = np.zeros_like(hs)
        dhs[:, :-1] = w * dsup
        _, dh_s = S.backward(cs, dhs)
        dh = dh_rec + dh_s
        dh[:, 1:] -= w * dsup
        ge, _ = E.backward(ce, dh)
        loss = c.reconstruction_weight * root + w * sup
        return loss, _prefixed(embedder=ge, recovery=gr), {"reconstruction": rec}

    def discriminator_loss(self, x: np.ndarray, z: np.ndarray, threshold: float | None = None):
        """Cross-entropy of real-embedded vs generated latents.

        With ``threshold`` set, gradients are only computed when the loss
        exceeds it; otherwise the returned grads dict is empty.
        """
        c = self.config
        E, G, S, D = (self.nets[n] for n in ("embedder", "generator", "supervisor", "discriminator"))
        B = x.shape[0]
        h = E(x)
        e_hat = G(z)
        h_hat = S(e_hat)
        streams = [h, h_hat] + ([e_hat] if c.discriminate_unsupervised else [])
        y, cd = D.forward(np.concatenate(streams))
        l_real, d_real = bce_with_logits(y[:B], 1.0)
        l_fake, d_fake = bce_with_logits(y[B:2 * B], 0.0)
        loss = l_real + l_fake
        dys = [d_real, d_fake]
        if c.discriminate_unsupervised:
            l_e, d_e = bce_with_logits(y[2 * B:], 0.0)
            loss += c.gamma * l_e
            dys.append(c.gamma * d_e)
        if threshold is not None and not loss > threshold:
            return loss, {}, {"discriminator": loss}
        grads, _ = D.backward(cd, np.concatenate(dys))
        return loss, _prefixed(discriminator=grads), {"discriminator": loss}

    # -- inference --------------------------------------------------------

    def generate_scaled(self, n: int, rng: np.random.Generator, chunk: int = 4096) -> np.ndarray:
        """Generated windows in the [0, 1] training representation."""
        c = self.config
        z = rng.uniform(0.0, 1.0, size=(n, c.seq_len, c.noise_dim))
        out = np.empty((n, c.seq_len, c.feature_dim))
        for s in range(0, n, chunk):
            zz = z[s:s + chunk]
            out[s:s + chunk] = self.nets["recovery"](self.nets["supervisor"](self.nets["generator"](zz)))
        return out

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self.nets["recovery"](self.nets["embedder"](x))


def _prefixed(**groups) -> dict[str, np.ndarray]:
    return {f"{net}.{k}": v for net, g in groups.items() for k, v in g.items()}


def _moment_loss(x_hat: np.ndarray, x: np.ndarray):
    """mean|std_hat - std| + mean|mean_hat - mean| over (step, feature); grad wrt x_hat."""
    B = x_hat.shape[0]
    mu_h, mu = x_hat.mean(axis=0), x.mean(axis=0)
    sd_h = np.sqrt(x_hat.var(axis=0) + MOMENT_EPS)
    sd = np.sqrt(x.var(axis=0) + MOMENT_EPS)
    k = mu_h.size
    loss = float(np.mean(np.abs(sd_h - sd)) + np.mean(np.abs(mu_h - mu)))
    d_sd = np.sign(sd_h - sd) / k
    d_mu = np.sign(mu_h - mu) / k
    grad = d_mu / B + d_sd * (x_hat - mu_h) / (B * sd_h)
    return loss, np.broadcast_to(grad, x_hat.shape).copy()


# -- training -------------------------------------------------------------

class Trainer:
    """Holds the model, data, RNG and schedule position so training can resume."""

    def __init__(self, model: TimeGan, windows: WindowSet, schedule: TrainSchedule,
                 transform: TransformParams | None = None, out_dir: str | Path | None = None):
        data = windows.data
        if data.min() < -1e-9 or data.max() > 1 + 1e-9:
            raise ValueError("training windows must be transformed into [0, 1] first")
        c = model.config
        if data.shape[1:] != (c.seq_len, c.feature_dim):
            raise ValueError(f"windows have shape {data.shape[1:]}, model expects {(c.seq_len, c.feature_dim)}")
        self.model = model
        self.windows = windows
        self.schedule = schedule
        self.transform = transform
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.rng = np.random.default_rng(schedule.seed)
        self.phase = "embedding"
        self.epoch = 0
        self.losses: dict[str, list[dict[str, float]]] = {"embedding": [], "supervised": [], "joint": []}
        self.snapshots: list[int] = []

    # batches of a fresh permutation; the tail batch is kept so every window is seen once
    def _batches(self):
        n = self.windows.n_windows
        perm = self.rng.permutation(n)
        for s in range(0, n, self.schedule.batch_size):
            yield self.windows.data[perm[s:s + self.schedule.batch_size]]

    def _noise(self, b: int) -> np.ndarray:
        c = self.model.config
        return self.rng.uniform(0.0, 1.0, size=(b, c.seq_len, c.noise_dim))

    def _finite(self, value: float, what: str) -> None:
        if not math.isfinite(value):
            path = None
            if self.out_dir is not None:
                path = self.out_dir / "diagnostic.ckpt"
                save_checkpoint(self, path)
            raise TrainingDiverged(f"non-finite {what} loss in {self.phase} epoch {self.epoch + 1}", path)

    def _epoch_mean(self, rows: list[dict[str, float]]) -> dict[str, float]:
        keys = rows[0].keys()
        return {k: float(np.mean([r[k] for r in rows if k in r])) for k in keys}

    def train_embedding_phase(self) -> list[float]:
        """Autoencoder pre-training; returns the per-epoch mean reconstruction MSE."""
        if self.phase != "embedding":
            return [r["reconstruction"] for r in self.losses["embedding"]]
        while self.epoch < self.schedule.epochs_embedding:
            rows = []
            for x in self._batches():
                loss, grads, parts = self.model.embedding_loss(x)
                self._finite(loss, "embedding")
                self.model.update("embedding", grads)
                rows.append(parts)
            self.losses["embedding"].append(self._epoch_mean(rows))
            self.epoch += 1
        self.phase, self.epoch = "supervised", 0
        return [r["reconstruction"] for r in self.losses["embedding"]]

    def train_supervised_phase(self) -> list[float]:
        if self.phase == "embedding":
            raise RuntimeError("embedding phase has not been run")
        if self.phase != "supervised":
            return [r["supervised"] for r in self.losses["supervised"]]
        while self.epoch < self.schedule.epochs_supervised:
            rows = []
            for x in self._batches():
                loss, grads, parts = self.model.supervised_loss(x)
                self._finite(loss, "supervised")
                self.model.update("supervised", grads)
                rows.append(parts)
            self.losses["supervised"].append(self._epoch_mean(rows))
            self.epoch += 1
        self.phase, self.epoch = "joint", 0
        return [r["supervised"] for r in self.losses["supervised"]]

    def joint_iteration(self, x: np.ndarray) -> dict[str, float]:
        m = self.model
        row: dict[str, float] = {}
        # the embedder moves after every generator step, as in the reference schedule
        for _ in range(2):
            loss, grads, parts = m.generator_loss(x, self._noise(x.shape[0]), m.nets["embedder"](x))
            self._finite(loss, "generator")
            m.update("generator", grads)
            row.update({f"g_{k}": v for k, v in parts.items()})
            loss, grads, parts = m.joint_embedding_loss(x)
            self._finite(loss, "embedder")
            m.update("joint_embedding", grads)
            row["e_reconstruction"] = parts["reconstruction"]
        loss, grads, _ = m.discriminator_loss(x, self._noise(x.shape[0]), m.config.discriminator_threshold)
        self._finite(loss, "discriminator")
        row["d_loss"] = loss
        row["d_updated"] = float(bool(grads))
        if grads:
            m.update("discriminator", grads)
        return row

    def train_joint_phase(self, snapshot_hook=None) -> dict[str, list[float]]:
        """Adversarial training with periodic snapshots.

        ``snapshot_hook(trainer, epoch)`` overrides the default disk snapshot.
        """
        if self.phase in ("embedding", "supervised"):
            raise RuntimeError("pre-training phases have not been run")
        due = set(self.schedule.snapshot_epochs())
        hook = snapshot_hook or _disk_snapshot
        if self.phase == "joint" and self.epoch == 0 and 0 in due and not self.snapshots:
            hook(self, 0)
            self.snapshots.append(0)
        while self.phase == "joint" and self.epoch < self.schedule.epochs_joint:
            rows = [self.joint_iteration(x) for x in self._batches()]
            self.losses["joint"].append(self._epoch_mean(rows))
            self.epoch += 1
            if self.epoch in due:
                hook(self, self.epoch)
                self.snapshots.append(self.epoch)
            log.debug("joint epoch %d %s", self.epoch, self.losses["joint"][-1])
        self.phase = "done"
        return {k: [r[k] for r in self.losses["joint"]] for k in (self.losses["joint"][0] if self.losses["joint"] else [])}

    def run(self, snapshot_hook=None) -> "Trainer":
        self.train_embedding_phase()
        self.train_supervised_phase()
        if self.phase == "joint":
            self.train_joint_phase(snapshot_hook)
        return self

    def snapshot_windows(self, epoch: int) -> WindowSet:
        if self.transform is None:
            raise ValueError("snapshots need the fitted transform")
        n = self.schedule.snapshot_multiplier * self.windows.n_windows
        return generate(self.model, self.transform, n, seed=_snapshot_seed(self.schedule.seed, epoch),
                        rate_hz=self.windows.rate_hz)


def _snapshot_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, 0x5A]).generate_state(1)[0])


def snapshot_name(epoch: int) -> str:
    return f"epoch_{epoch:05d}"


def _disk_snapshot(trainer: Trainer, epoch: int) -> None:
    if trainer.out_dir is None:
        return
    d = trainer.out_dir / "snapshots" / snapshot_name(epoch)
    d.mkdir(parents=True, exist_ok=True)
    save_checkpoint(trainer, d / "checkpoint.ckpt")
    if trainer.transform is not None:
        save_windows(trainer.snapshot_windows(epoch), d / "windows", {"epoch": epoch})


def train_embedding_phase(trainer: Trainer) -> list[float]:
    return trainer.train_embedding_phase()


def train_supervised_phase(trainer: Trainer) -> list[float]:
    return trainer.train_supervised_phase()


def train_joint_phase(trainer: Trainer, snapshot_hook=None) -> dict[str, list[float]]:
    return trainer.train_joint_phase(snapshot_hook)


def generate(model: TimeGan, params: TransformParams, n: int, seed: int = 0,
             rate_hz: float = 1.0) -> WindowSet:
    """Draw ``n`` windows and map them back to degrees."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    scaled = model.generate_scaled(n, np.random.default_rng(seed))
    degrees, clamped = invert_array(scaled, params)
    return WindowSet(degrees, rate_hz, {"generated": True, "seed": seed, "clamped_values": clamped})


# -- snapshot selection ---------------------------------------------------

def select_snapshot(archive, real: WindowSet) -> tuple[str, list[dict]]:
    """Rank snapshots by :func:`~headgen.metrics.snapshot_score`; lowest wins.

    ``archive`` is a snapshot directory (``snapshots/epoch_*/windows``) or a
    mapping from snapshot id to :class:`WindowSet`.
    """
    if isinstance(archive, (str, Path)):
        root = Path(archive)
        if (root / "snapshots").is_dir():
            root = root / "snapshots"
        entries = {p.name: p / "windows" for p in sorted(root.iterdir()) if (p / "windows").is_dir()}
    else:
        entries = dict(archive)
    if not entries:
        raise ValueError("snapshot archive is empty")
    table = []
    for sid in sorted(entries):
        ws = entries[sid]
        if not isinstance(ws, WindowSet):
            ws = load_windows(ws)
        row = {"snapshot": sid, **snapshot_score(real, ws)}
        table.append(row)
    best = min(table, key=lambda r: (r["score"] if math.isfinite(r["score"]) else math.inf, r["snapshot"]))
    return best["snapshot"], table


# -- checkpoints ----------------------------------------------------------

def _tensor_dict(trainer: Trainer) -> dict[str, np.ndarray]:
    tensors = {f"param.{k}": v for k, v in trainer.model.params().items()}
    for name, opt in trainer.model.optimizers.items():
        tensors.update({f"adam.{name}.{k}": v for k, v in opt.state_arrays().items()})
    return tensors


def save_checkpoint(trainer: Trainer, path: str | Path) -> Path:
    """Write a single-file checkpoint.

    Layout: 8-byte magic, little-endian u64 manifest length, UTF-8 JSON
    manifest, then the float64 little-endian tensor payloads back to back.
    """
    path = Path(path)
    tensors = _tensor_dict(trainer)
    index, offset = [], 0
    for name in sorted(tensors):
        arr = tensors[name]
        nbytes = 8 * arr.size
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": nbytes})
        offset += nbytes
    manifest = {
        "format": "headgen.checkpoint",
        "version": CHECKPOINT_VERSION,
        "model": trainer.model.config.to_dict(),
        "schedule": trainer.schedule.to_dict(),
        "position": {"phase": trainer.phase, "epoch": trainer.epoch},
        "optimizer_steps": {k: o.step_count for k, o in trainer.model.optimizers.items()},
        "rng_state": trainer.rng.bit_generator.state,
        "losses": trainer.losses,
        "snapshots": trainer.snapshots,
        "transform": trainer.transform.to_dict() if trainer.transform is not None else None,
        "rate_hz": trainer.windows.rate_hz,
        "n_windows": trainer.windows.n_windows,
        "tensors": index,
        "payload_bytes": offset,
    }
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for entry in index:
            fh.write(np.ascontiguousarray(tensors[entry["name"]], dtype="<f8").tobytes())
    tmp.replace(path)
    return path


@dataclass
class Checkpoint:
    manifest: dict
    tensors: dict[str, np.ndarray] = field(repr=False)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.manifest["model"])

    @property
    def schedule(self) -> TrainSchedule:
        return TrainSchedule(**self.manifest["schedule"])

    @property
    def transform(self) -> TransformParams | None:
        t = self.manifest.get("transform")
        return TransformParams.from_dict(t) if t else None

    def build_model(self) -> TimeGan:
        model = TimeGan(self.model_config)
        model.set_params({k[6:]: v for k, v in self.tensors.items() if k.startswith("param.")})
        for name, opt in model.optimizers.items():
            prefix = f"adam.{name}."
            opt.load_state_arrays({k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)})
            opt.step_count = self.manifest["optimizer_steps"][name]
        return model


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header ({len(raw)} bytes, need 16)")
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic at offset 0")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise CheckpointError(f"{path}: manifest runs to offset {16 + hlen}, file has {len(raw)} bytes")
    try:
        manifest = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable manifest at offset 16: {e}") from None
    version = manifest.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version} (this build reads {CHECKPOINT_VERSION})")
    base = 16 + hlen
    if len(raw) - base != manifest["payload_bytes"]:
        raise CheckpointError(f"{path}: payload is {len(raw) - base} bytes from offset {base}, "
                              f"manifest declares {manifest['payload_bytes']}")
    tensors = {}
    for entry in manifest["tensors"]:
        start = base + entry["offset"]
        arr = np.frombuffer(raw, dtype="<f8", count=entry["nbytes"] // 8, offset=start)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return Checkpoint(manifest, tensors)


def restore_trainer(ckpt: Checkpoint | str | Path, windows: WindowSet,
                    out_dir: str | Path | None = None) -> Trainer:
    """Rebuild a trainer mid-schedule from a checkpoint and the training windows."""
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    trainer = Trainer(ckpt.build_model(), windows, ckpt.schedule, ckpt.transform, out_dir)
    trainer.rng.bit_generator.state = ckpt.manifest["rng_state"]
    pos = ckpt.manifest["position"]
    trainer.phase, trainer.epoch = pos["phase"], pos["epoch"]
    trainer.losses = {k: [dict(r) for r in v] for k, v in ckpt.manifest["losses"].items()}
    trainer.snapshots = list(ckpt.manifest["snapshots"])
    return trainer


def with_schedule(trainer: Trainer, **changes) -> Trainer:
    trainer.schedule = replace(trainer.schedule, **changes)
    return trainer
