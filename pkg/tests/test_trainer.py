import numpy as np
import pytest

from beamgat.autodiff import Tape, Tensor
from beamgat.beams import DESK_SENSOR, DropoutPattern, MaskedFrame, apply_channel_dropout
from beamgat.gat import ModelConfig, init_params
from beamgat.metrics import rmse_z
from beamgat.pointcloud import PointCloud, range_filter
from beamgat.synth import Scene, make_benchmark_set, raycast_scan
from beamgat.trainer import (
    AdamState,
    GraphConfig,
    TrainConfig,
    adam_step,
    denormalize_z,
    loss_masked_mse,
    normalize_frame,
    normalize_z,
    predict_z,
    prepare_frame,
    split_frames,
    train,
)
from conftest import central_difference

TINY = ModelConfig(layers=2, heads=2, head_width=4, head_hidden=8, dropout_rate=0.0)


def _frame(z, masked, beam=None):
    n = len(z)
    xyz = np.column_stack([np.arange(n, dtype=float), np.ones(n), z])
    beam = np.arange(n) % 4 if beam is None else beam
    c = PointCloud(xyz, np.full(n, 0.5), beam=beam, masked=np.asarray(masked, bool))
    truth = c.z[c.masked].copy()
    c.xyz[c.masked, 2] = 0.0
    return MaskedFrame(c, truth)


def test_constant_feature_normalises_to_zero():
    f = _frame([1.0, -1.0, 1.0, -1.0, 5.0], [0, 0, 0, 0, 1])
    feats, stats = normalize_frame(f)
    col = stats.names.index("reflectance")
    assert np.array_equal(feats.values[:, col], np.zeros(5))
    assert stats.std[col] == 1e-6


def test_observed_z_unit_statistics():
    f = _frame([1.0, -1.0, 1.0, -1.0, 5.0], [0, 0, 0, 0, 1])
    feats, stats = normalize_frame(f)
    zc = stats.names.index("z_masked")
    assert feats.values[:4, zc].tolist() == [1.0, -1.0, 1.0, -1.0]
    assert feats.values[4, zc] == 0.0
    assert (stats.z_mean, stats.z_std) == (0.0, 1.0)
    mc = stats.names.index("mask_flag")
    assert feats.values[:, mc].tolist() == [0, 0, 0, 0, 1]


def test_denormalise_round_trip(rng):
    z = rng.normal(-1.5, 0.7, 50)
    f = _frame(z, rng.random(50) < 0.3)
    _, stats = normalize_frame(f)
    obs = ~f.cloud.masked
    assert np.max(np.abs(denormalize_z(normalize_z(z[obs], stats), stats) - z[obs])) <= 1e-12


def test_all_masked_rejected():
    with pytest.raises(ValueError):
        normalize_frame(_frame([1.0, 2.0], [1, 1]))


def test_leakage_free_statistics(rng):
    z = rng.normal(size=20)
    masked = np.arange(20) % 3 == 0
    a, b = _frame(z, masked), _frame(np.where(masked, 100.0, z), masked)
    assert np.array_equal(normalize_frame(a)[0].values, normalize_frame(b)[0].values)


def test_loss_perfect_and_offset(rng):
    f = _frame(rng.normal(size=12), np.arange(12) % 4 == 0)
    _, stats = normalize_frame(f)
    z_hat = np.zeros(12)
    z_hat[f.masked_index] = normalize_z(f.truth_z, stats)
    assert loss_masked_mse(Tensor(z_hat), f, stats).item() == 0.0
    z_hat[f.masked_index] += 0.3
    assert loss_masked_mse(Tensor(z_hat), f, stats).item() == pytest.approx(0.09, abs=1e-14)


def test_loss_gradient(rng):
    f = _frame(rng.normal(size=15), np.arange(15) % 3 == 0)
    _, stats = normalize_frame(f)
    z0 = rng.normal(size=15)
    with Tape() as tape:
        z = tape.watch(z0)
        g = tape.backward(loss_masked_mse(z, f, stats))[z.node_id].values
    numeric = central_difference(lambda v: loss_masked_mse(Tensor(v), f, stats).item(), z0)
    analytic = np.zeros(15)
    idx = f.masked_index
    analytic[idx] = 2 * (z0[idx] - normalize_z(f.truth_z, stats)) / idx.size
    assert np.max(np.abs(g - analytic)) < 1e-14
    assert np.max(np.abs(g - numeric)) < 1e-8


def test_loss_needs_masked_points():
    f = _frame([1.0, 2.0, 3.0], [0, 0, 0])
    _, stats = normalize_frame(f)
    with pytest.raises(ValueError):
        loss_masked_mse(Tensor(np.zeros(3)), f, stats)


def test_adam_first_step():
    cfg = TrainConfig(learning_rate=0.01)
    for g in (3.0, -0.002):
        p, _ = adam_step({"w": np.array([1.0])}, {"w": np.array([g])}, AdamState(), cfg)
        step = p["w"][0] - 1.0
        assert abs(abs(step) - 0.01) < 1e-6 and np.sign(step) == -np.sign(g)


def test_adam_zero_gradient_and_zero_lr():
    p0 = {"w": np.array([1.0, -2.0])}
    p, st = adam_step(p0, {"w": np.zeros(2)}, AdamState(), TrainConfig())
    assert np.array_equal(p["w"], p0["w"]) and st.t == 1
    p, _ = adam_step(p0, {"w": np.array([5.0, 1.0])}, AdamState(), TrainConfig(learning_rate=0.0))
    assert np.array_equal(p["w"], p0["w"])


def test_adam_scalar_convergence():
    cfg = TrainConfig(learning_rate=0.1)
    params, state = {"w": np.array([0.0])}, AdamState()
    for _ in range(200):
        grad = 2 * (params["w"] - 3.0)
        params, state = adam_step(params, {"w": grad}, state, cfg)
    assert abs(params["w"][0] - 3.0) < 0.05


def test_split_frames():
    assert split_frames(20, 0.2) == (list(range(16)), list(range(16, 20)))
    assert split_frames(2, 0.2) == ([0], [1])
    with pytest.raises(ValueError):
        split_frames(1, 0.2)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch=2)


def _small_frames(n=3, seed=0):
    frames = make_benchmark_set(n, seed=seed, azimuth_steps=48)
    return [apply_channel_dropout(range_filter(c), DropoutPattern()) for c in frames]


def test_empty_split_rejected():
    with pytest.raises(ValueError):
        train(_small_frames(1), TINY, TrainConfig(max_epochs=1), sensor=DESK_SENSOR)
    with pytest.raises(ValueError):
        train(_small_frames(2), TINY, TrainConfig(max_epochs=1), sensor=DESK_SENSOR, validation=[])


def test_patience_zero_stops_at_first_non_improvement():
    frames = _small_frames(3)
    seen = []
    # a vanishing learning rate leaves validation loss flat after epoch 1
    cfg = TrainConfig(learning_rate=0.0, max_epochs=10, patience=0)
    best, log = train(frames, TINY, cfg, sensor=DESK_SENSOR, callback=seen.append)
    assert [r["epoch"] for r in log] == [1, 2]
    assert seen == log
    assert best.meta["epoch"] == 1 and best.meta["last_epoch"] == 2


def test_training_deterministic_and_best_checkpoint():
    frames = _small_frames(3)
    cfg = TrainConfig(learning_rate=1e-2, max_epochs=4, patience=2, seed=3)
    a, log_a = train(frames, TINY, cfg, sensor=DESK_SENSOR)
    b, log_b = train(frames, TINY, cfg, sensor=DESK_SENSOR)
    assert a.equals(b)
    strip = lambda log: [(r["epoch"], r["train_loss"], r["val_loss"]) for r in log]
    assert strip(log_a) == strip(log_b)
    assert a.meta["val_loss"] == min(r["val_loss"] for r in log_a)


def test_resume_continues_epoch_numbers():
    frames = _small_frames(3)
    cfg = TrainConfig(learning_rate=1e-2, max_epochs=2, patience=5)
    first, log1 = train(frames, TINY, cfg, sensor=DESK_SENSOR)
    _, log2 = train(frames, TINY, cfg, sensor=DESK_SENSOR, init_model=first,
                    start_epoch=log1[-1]["epoch"])
    assert [r["epoch"] for r in log2] == [3, 4]


def test_init_model_config_must_match():
    with pytest.raises(ValueError):
        train(_small_frames(3), TINY, TrainConfig(max_epochs=1), sensor=DESK_SENSOR,
              init_model=init_params(ModelConfig(layers=1, heads=1, head_width=2), 0))


def test_single_plane_frame_fits():
    scan = range_filter(raycast_scan(Scene(-1.73), DESK_SENSOR, 90, noise_std=0.01, seed=4))
    frame = apply_channel_dropout(scan, DropoutPattern())
    prepared = prepare_frame(frame, TINY, GraphConfig(k=6), DESK_SENSOR)
    cfg = TrainConfig(learning_rate=5e-3, max_epochs=100, patience=100)
    model, _ = train([prepared], TINY, cfg, validation=[prepared])
    assert rmse_z(predict_z(model, prepared), frame.truth_z) < 0.05
