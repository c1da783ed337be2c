import csv
import hashlib
import json
import os

import numpy as np
import pytest
import yaml

from beamgat.cli import DEFAULTS, load_config, main
from beamgat.pointcloud import write_kitti_bin
from beamgat.synth import make_benchmark_set

SMALL = {
    "data": {"n_frames": 4, "azimuth_steps": 72, "subsample": 600},
    "model": {"layers": 2, "heads": 2, "head_width": 4, "head_hidden": 8},
    "train": {"max_epochs": 2, "learning_rate": 0.005},
    "eval": {"k_values": [4, 8, 16], "sweep_repeats": 1},
}


def _config(tmp_path, name="run", **sections):
    cfg = {s: dict(v) for s, v in SMALL.items()}
    for section, values in sections.items():
        if values is None:
            cfg[section] = None
        else:
            cfg.setdefault(section, {}).update(values)
    cfg["output"] = {"root": str(tmp_path / "runs"), "name": name}
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path), tmp_path / "runs" / name


class Out:
    def __init__(self):
        self.text = ""

    def write(self, s):
        self.text += s

    def flush(self):
        pass


def run(*argv):
    out = Out()
    code = main(list(argv), out=out)
    return code, out.text


def _digests(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.iterdir())}


@pytest.fixture
def pipeline(tmp_path):
    """Config path and run directory after synth + dropout."""
    cfg, rd = _config(tmp_path)
    assert run("synth", "-c", cfg)[0] == 0
    assert run("dropout", "-c", cfg)[0] == 0
    return cfg, rd


def test_synth_default_twenty_frames(tmp_path):
    code, text = run("synth", "--run-dir", str(tmp_path / "d"))
    assert code == 0
    assert len(list((tmp_path / "d" / "frames").glob("*.csv"))) == 20
    assert len(text.strip().splitlines()) == 20
    assert (tmp_path / "d" / "synth.config.yaml").exists()


def test_synth_rerun_identical_files(tmp_path):
    cfg, rd = _config(tmp_path)
    run("synth", "-c", cfg)
    first = _digests(rd / "frames")
    run("synth", "-c", cfg)
    assert _digests(rd / "frames") == first


def test_synth_zero_frames_is_usage_error(tmp_path):
    cfg, _ = _config(tmp_path)
    assert run("synth", "-c", cfg, "--n-frames", "0")[0] == 1


def test_config_rejections(tmp_path):
    cfg, _ = _config(tmp_path)
    assert run("synth", "-c", cfg, "--set", "data.bogus=1")[0] == 1
    assert run("synth", "-c", cfg, "--set", "nosection.k=1")[0] == 1
    assert run("synth", "-c", cfg, "--set", "graph.k=ten")[0] == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("data: [1, 2")
    assert run("synth", "-c", str(bad))[0] == 1
    assert run("synth", "-c", str(tmp_path / "missing.yaml"))[0] == 1
    assert run()[0] == 1
    assert run("nonsense")[0] == 1


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run("synth", "--run-dir", str(blocker / "sub"))[0] == 1


def test_load_config_defaults_and_types():
    cfg = load_config(None, {"train": {"learning_rate": 1}})
    assert cfg["train"]["learning_rate"] == 1.0 and isinstance(cfg["train"]["learning_rate"], float)
    assert cfg["graph"] == DEFAULTS["graph"]


def test_dropout_every_fourth_with_offset(tmp_path):
    cfg, rd = _config(tmp_path, dropout={"phase_offset": 1})
    run("synth", "-c", cfg)
    code, text = run("dropout", "-c", cfg)
    assert code == 0
    assert text.strip() == "dropped beams: 1 5 9 13"
    manifest = json.loads((rd / "masked" / "dropout.json").read_text())
    assert manifest["dropped_beams"] == [1, 5, 9, 13]
    with open(rd / "masked" / "frame_0000.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 600
    assert all((int(r["beam"]) % 4 == 1) == (r["masked"] == "1") for r in rows)
    assert all(float(r["z"]) == 0.0 for r in rows if r["masked"] == "1")


def test_random_fraction_reproducible(tmp_path):
    cfg, rd = _config(tmp_path, dropout={"kind": "random_fraction", "n_or_fraction": 0.25, "seed": 9})
    run("synth", "-c", cfg)
    a = run("dropout", "-c", cfg)[1]
    b = run("dropout", "-c", cfg)[1]
    assert a == b and len(a.split(":")[1].split()) == 4


def test_dropping_every_beam_refused(tmp_path):
    cfg, _ = _config(tmp_path, dropout={"kind": "contiguous_band", "n_or_fraction": 16})
    run("synth", "-c", cfg)
    assert run("dropout", "-c", cfg)[0] == 1


def test_frames_without_beams_need_sensor(tmp_path):
    cloud = make_benchmark_set(1, azimuth_steps=72)[0]
    write_kitti_bin(cloud, tmp_path / "scan.bin")
    pattern = str(tmp_path / "*.bin")
    cfg, _ = _config(tmp_path, data={"input": pattern}, sensor=None)
    assert run("dropout", "-c", cfg)[0] == 2
    cfg, rd = _config(tmp_path, name="with_sensor", data={"input": pattern})
    assert run("dropout", "-c", cfg)[0] == 0
    assert (rd / "masked" / "scan.truth.csv").exists()


def test_missing_input_frames_is_data_error(tmp_path):
    cfg, _ = _config(tmp_path)
    assert run("dropout", "-c", cfg)[0] == 2
    assert run("train", "-c", cfg)[0] == 2


def test_train_one_epoch_and_resume(pipeline):
    cfg, rd = pipeline
    code, _ = run("train", "-c", cfg, "--max-epochs", "1")
    assert code == 0
    log = (rd / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,train_loss,val_loss,seconds" and len(log) == 2
    snapshot = rd / "first.bgat"
    snapshot.write_bytes((rd / "model.bgat").read_bytes())
    assert run("train", "-c", cfg, "--resume", str(snapshot))[0] == 0
    epochs = [int(line.split(",")[0]) for line in (rd / "train_log.csv").read_text().splitlines()[1:]]
    assert epochs == [1, 2, 3]


def test_resume_missing_checkpoint(pipeline):
    cfg, _ = pipeline
    assert run("train", "-c", cfg, "--resume", "/nonexistent/model.bgat")[0] == 1


def test_empty_train_split(tmp_path):
    cfg, _ = _config(tmp_path, data={"n_frames": 1})
    run("synth", "-c", cfg)
    run("dropout", "-c", cfg)
    assert run("train", "-c", cfg)[0] == 2


def test_eval_truth_as_prediction(pipeline):
    cfg, rd = pipeline
    code, _ = run("eval", "-c", cfg, "--set", "eval.predictor=truth", "--set", "eval.frames=all")
    assert code == 0
    with open(rd / "eval" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 and rows[-1]["frame_id"] == "aggregate"
    for r in rows:
        assert float(r["rmse_z"]) == 0 and float(r["rmse_xyz"]) == 0 and float(r["chamfer"]) == 0
        assert float(r["accuracy"]) == 1
    assert (rd / "eval" / "recon" / "frame_0000.ply").exists()
    assert (rd / "eval" / "cdf.csv").read_text().splitlines()[1] == "0.000000,1"


def test_eval_with_model_and_runtime(pipeline):
    cfg, rd = pipeline
    run("train", "-c", cfg)
    assert run("eval", "-c", cfg)[0] == 0
    with open(rd / "eval" / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2  # one validation frame plus the aggregate
    assert float(rows[0]["runtime_s"]) > 0
    assert run("reconstruct", "-c", cfg)[0] == 0


def test_eval_scores_external_reconstructions(pipeline):
    cfg, rd = pipeline
    run("eval", "-c", cfg, "--set", "eval.predictor=truth")
    recon = rd / "eval" / "recon"
    saved = rd.parent / "external"
    saved.mkdir()
    for p in recon.glob("*.csv"):
        (saved / p.name).write_bytes(p.read_bytes())
    assert run("eval", "-c", cfg, "--set", f"eval.predictor={saved}")[0] == 0
    with open(rd / "eval" / "metrics.csv") as fh:
        assert float(next(csv.DictReader(fh))["rmse_z"]) < 1e-8


def test_eval_feature_mismatch(pipeline):
    cfg, _ = pipeline
    run("train", "-c", cfg, "--max-epochs", "1")
    code = run("eval", "-c", cfg, "--set", "model.input_features=[x, y, z_masked, mask_flag]")[0]
    assert code == 1
    assert run("eval", "-c", cfg, "--set", "model.heads=3")[0] == 1


def test_eval_without_model(pipeline):
    cfg, _ = pipeline
    assert run("eval", "-c", cfg)[0] == 2


def test_corrupt_model_is_data_error(pipeline):
    cfg, rd = pipeline
    (rd / "model.bgat").write_bytes(b"BEAMGAT\n" + b"\x00" * 3)
    assert run("eval", "-c", cfg)[0] == 2


def test_sweep_three_rows(pipeline):
    cfg, rd = pipeline
    run("train", "-c", cfg, "--max-epochs", "1")
    code, text = run("sweep-k", "-c", cfg)
    assert code == 0
    lines = (rd / "sweep_k.csv").read_text().splitlines()
    assert lines[0] == "k,rmse_xyz,rmse_z,seconds"
    assert [int(line.split(",")[0]) for line in lines[1:]] == [4, 8, 16]


def test_sweep_retrain_mode(pipeline):
    cfg, rd = pipeline
    code, _ = run("sweep-k", "-c", cfg, "--k", "3,5", "--set", "eval.sweep_mode=retrain",
                  "--set", "train.max_epochs=1")
    assert code == 0
    assert len((rd / "sweep_k.csv").read_text().splitlines()) == 3


def test_sweep_invalid_k(pipeline):
    cfg, _ = pipeline
    run("train", "-c", cfg, "--max-epochs", "1")
    assert run("sweep-k", "-c", cfg, "--k", "4,600")[0] == 1
    assert run("sweep-k", "-c", cfg, "--k", "0")[0] == 1
    assert run("sweep-k", "-c", cfg, "--k", "a,b")[0] == 1


def test_info(pipeline):
    cfg, _ = pipeline
    run("train", "-c", cfg, "--max-epochs", "1")
    code, text = run("info", "-c", cfg)
    assert code == 0
    assert "parameters" in text and "masked: 4 frame(s)" in text


def test_module_entry_point(tmp_path):
    import subprocess
    import sys
    env = dict(os.environ)
    res = subprocess.run([sys.executable, "-m", "beamgat", "info", "--run-dir", str(tmp_path / "x")],
                         capture_output=True, text=True, env=env)
    assert res.returncode == 0 and "beamgat" in res.stdout


def test_resolved_config_written(pipeline):
    cfg, rd = pipeline
    echoed = yaml.safe_load((rd / "dropout.config.yaml").read_text())
    assert echoed["data"]["subsample"] == 600
    assert set(echoed) == set(DEFAULTS)
    assert np.isclose(echoed["sensor"]["theta_min_deg"], -24.8)
