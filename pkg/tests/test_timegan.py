import numpy as np
import pytest

from headgen.data import WindowSet, load_windows
from headgen.nn import gradient_check
from headgen.preprocess import apply_transform, fit_transform
from headgen.timegan import (CheckpointError, ModelConfig, TimeGan, Trainer, TrainSchedule, generate,
                             load_checkpoint, restore_trainer, save_checkpoint, select_snapshot)
from headgen.toy import toy_windows

TINY = ModelConfig(seq_len=6, hidden_dim=5, num_layers=2, latent_dim=4, noise_dim=2)


def tiny_model(config=TINY, seed=0):
    m = TimeGan(config, seed=seed)
    # nudge biases off zero so every gate path carries gradient
    rng = np.random.default_rng(seed + 10)
    m.set_params({k: v + rng.normal(scale=0.1, size=v.shape) for k, v in m.params().items()})
    return m


def tiny_batch(config=TINY, b=3, seed=1):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.05, 0.95, size=(b, config.seq_len, config.feature_dim))
    z = rng.uniform(size=(b, config.seq_len, config.noise_dim))
    return x, z


def check_head(model, head, *args):
    loss, grads, _ = getattr(model, head)(*args)
    params = model.params(*sorted({k.split(".")[0] for k in grads}))

    def loss_fn(p):
        model.set_params(p)
        return getattr(model, head)(*args)[0]

    # entries far below the loss's round-off (a few ulps of |L| per evaluation)
    # are compared absolutely; every other entry stays purely relative
    step, tolerance = 1e-3, 1e-4
    floor = max(1e-8, 10 * np.finfo(float).eps * abs(loss) / (step * tolerance))
    rep = gradient_check(params, loss_fn, grads, tolerance=tolerance, step=step, floor=floor, stencil=4)
    model.set_params(params)
    return rep


# the two-stream discriminator variant is covered by the acceptance suite
def test_loss_head_gradients():
    m = tiny_model()
    x, z = tiny_batch()
    heads = [("generator_loss", x, z), ("discriminator_loss", x, z), ("embedding_loss", x),
             ("supervised_loss", x), ("joint_embedding_loss", x)]
    for head, *args in heads:
        rep = check_head(m, head, *args)
        assert rep.ok, (head, rep.failures[:3])
        assert rep.max_rel_error < 1e-4


def test_generator_grads_cover_generator_and_supervisor_only():
    m = tiny_model()
    x, z = tiny_batch()
    _, grads, parts = m.generator_loss(x, z)
    assert {k.split(".")[0] for k in grads} == {"generator", "supervisor"}
    assert set(parts) == {"adversarial", "supervised", "moment"}
    _, grads, _ = m.discriminator_loss(x, z)
    assert {k.split(".")[0] for k in grads} == {"discriminator"}


def test_discriminator_threshold_skips_update():
    m = tiny_model()
    x, z = tiny_batch()
    loss, grads, _ = m.discriminator_loss(x, z, threshold=1e9)
    assert grads == {} and loss > 0
    _, grads, _ = m.discriminator_loss(x, z, threshold=0.0)
    assert grads


def test_frozen_discriminator_descends():
    m = tiny_model()
    x, z = tiny_batch(b=8)
    first = m.discriminator_loss(x, z)[0]
    for _ in range(30):
        _, grads, _ = m.discriminator_loss(x, z)
        m.update("discriminator", grads)
    assert m.discriminator_loss(x, z)[0] < first


def test_schedule_snapshot_epochs():
    assert len(TrainSchedule().snapshot_epochs()) == 125
    assert TrainSchedule(epochs_joint=0).snapshot_epochs() == [0]
    assert TrainSchedule(epochs_joint=25, snapshot_every=10).snapshot_epochs() == [10, 20, 25]
    with pytest.raises(ValueError):
        TrainSchedule(epochs_joint=-1)
    with pytest.raises(ValueError):
        TrainSchedule(batch_size=0)


def small_data(n=40, seq=6, seed=0):
    raw = toy_windows(n, seq, seed=seed)
    params = fit_transform(raw, quantile_count=100)
    return raw, apply_transform(raw, params), params


def small_trainer(schedule, out_dir=None, seed=0):
    raw, scaled, params = small_data()
    cfg = ModelConfig(seq_len=6, hidden_dim=6, num_layers=2, latent_dim=6)
    return Trainer(TimeGan(cfg, seed=seed), scaled, schedule, params, out_dir), raw


def test_trainer_rejects_untransformed_and_wrong_shape():
    raw, scaled, _ = small_data()
    with pytest.raises(ValueError, match="transformed"):
        Trainer(TimeGan(ModelConfig(seq_len=6)), raw, TrainSchedule())
    with pytest.raises(ValueError, match="shape"):
        Trainer(TimeGan(ModelConfig()), scaled, TrainSchedule())


def test_zero_epoch_phases_leave_model_unchanged():
    trainer, _ = small_trainer(TrainSchedule(0, 0, 0, batch_size=16))
    before = {k: v.copy() for k, v in trainer.model.params().items()}
    calls = []
    trainer.run(snapshot_hook=lambda t, e: calls.append(e))
    assert calls == [0]
    assert trainer.phase == "done"
    assert all(np.array_equal(before[k], v) for k, v in trainer.model.params().items())


def test_phase_order_enforced():
    trainer, _ = small_trainer(TrainSchedule(1, 1, 1))
    with pytest.raises(RuntimeError):
        trainer.train_supervised_phase()
    with pytest.raises(RuntimeError):
        trainer.train_joint_phase()


def test_pretraining_reduces_losses():
    # retentive gates sit on the predict-the-mean plateau for a while first
    trainer, _ = small_trainer(TrainSchedule(300, 20, 0, batch_size=16))
    rec = trainer.train_embedding_phase()
    sup = trainer.train_supervised_phase()
    assert rec[-1] < 0.6 * rec[0]
    assert sup[-1] < sup[0]


def test_joint_phase_logs_and_snapshots():
    trainer, _ = small_trainer(TrainSchedule(2, 2, 3, batch_size=16, snapshot_every=2))
    seen = []
    trainer.run(snapshot_hook=lambda t, e: seen.append(e))
    assert seen == [2, 3]
    assert len(trainer.losses["joint"]) == 3
    row = trainer.losses["joint"][0]
    assert {"g_adversarial", "g_supervised", "g_moment", "e_reconstruction", "d_loss", "d_updated"} <= set(row)
    assert all(np.isfinite(v) for r in trainer.losses["joint"] for v in r.values())


def test_training_is_deterministic(tmp_path):
    sched = TrainSchedule(2, 2, 2, batch_size=16, snapshot_every=1, snapshot_multiplier=2)
    a, _ = small_trainer(sched, tmp_path / "a")
    b, _ = small_trainer(sched, tmp_path / "b")
    a.run()
    b.run()
    save_checkpoint(a, tmp_path / "a.ckpt")
    save_checkpoint(b, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    for e in ("epoch_00001", "epoch_00002"):
        wa = (tmp_path / "a" / "snapshots" / e / "windows" / "data.bin").read_bytes()
        wb = (tmp_path / "b" / "snapshots" / e / "windows" / "data.bin").read_bytes()
        assert wa == wb
    snap = load_windows(tmp_path / "a" / "snapshots" / "epoch_00002" / "windows")
    assert snap.n_windows == 2 * 40


def test_checkpoint_round_trip_and_resume(tmp_path):
    sched = TrainSchedule(3, 3, 4, batch_size=16, snapshot_every=100)
    full, _ = small_trainer(sched)
    full.run(snapshot_hook=lambda t, e: None)

    half, _ = small_trainer(sched)
    half.train_embedding_phase()
    half.train_supervised_phase()
    half.schedule = TrainSchedule(3, 3, 2, batch_size=16, snapshot_every=100)
    half.train_joint_phase(lambda t, e: None)
    # pretend the run was cut after joint epoch 2
    half.phase, half.snapshots = "joint", []
    half.schedule = sched
    path = save_checkpoint(half, tmp_path / "mid.ckpt")
    ck = load_checkpoint(path)
    for k, v in half.model.params().items():
        assert np.array_equal(ck.tensors[f"param.{k}"], v)
    resumed = restore_trainer(ck, half.windows)
    assert resumed.epoch == 2
    resumed.train_joint_phase(lambda t, e: None)
    save_checkpoint(full, tmp_path / "full.ckpt")
    save_checkpoint(resumed, tmp_path / "resumed.ckpt")
    assert (tmp_path / "full.ckpt").read_bytes() == (tmp_path / "resumed.ckpt").read_bytes()


def test_checkpoint_errors(tmp_path):
    trainer, _ = small_trainer(TrainSchedule(0, 0, 0))
    good = save_checkpoint(trainer, tmp_path / "c.ckpt").read_bytes()
    p = tmp_path / "bad.ckpt"
    p.write_bytes(good[:-8])
    with pytest.raises(CheckpointError, match="payload"):
        load_checkpoint(p)
    p.write_bytes(b"NOTACKPT" + good[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)
    p.write_bytes(good[:10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)
    p.write_bytes(good.replace(b'"version": 1', b'"version": 9'))
    with pytest.raises(CheckpointError, match="version 9"):
        load_checkpoint(p)


def test_generate_shapes_and_seeds():
    trainer, _ = small_trainer(TrainSchedule(1, 1, 0))
    m, params = trainer.model, trainer.transform
    a = generate(m, params, 7, seed=1)
    assert a.data.shape == (7, 6, 3)
    assert np.all(np.isfinite(a.data))
    assert np.array_equal(a.data, generate(m, params, 7, seed=1).data)
    assert not np.array_equal(a.data, generate(m, params, 7, seed=2).data)
    assert generate(m, params, 1).n_windows == 1
    with pytest.raises(ValueError):
        generate(m, params, 0)


def test_select_snapshot():
    raw = toy_windows(60, 25, seed=0)
    rng = np.random.default_rng(0)
    noisy = WindowSet(raw.data + rng.normal(scale=15, size=raw.data.shape), raw.rate_hz)
    flat = WindowSet(np.zeros_like(raw.data) + rng.normal(scale=0.1, size=raw.data.shape), raw.rate_hz)
    archive = {"epoch_00010": noisy, "epoch_00020": raw, "epoch_00030": flat}
    best, table = select_snapshot(archive, raw)
    assert best == "epoch_00020"
    assert [r["snapshot"] for r in table] == sorted(archive)
    assert next(r for r in table if r["snapshot"] == best)["score"] == 0.0
    reordered = dict(reversed(list(archive.items())))
    assert select_snapshot(reordered, raw)[0] == best
    assert select_snapshot({"only": noisy}, raw)[0] == "only"
    with pytest.raises(ValueError, match="empty"):
        select_snapshot({}, raw)
