import json
import os

import numpy as np
import pytest

from gyrodenoise import cli, data


def run(*argv):
    return cli.main(list(argv))


def synth_scene(tmp_path, name="scene", duration=12.0, seed=7, **extra):
    out = str(tmp_path / name)
    argv = ["synth", "--duration", str(duration), "--rate", "200",
            "--seed", str(seed), "--out", out]
    for flag, val in extra.items():
        argv += [f"--{flag.replace('_', '-')}", str(val)]
    assert run(*argv) == 0
    return out


# -- synth -------------------------------------------------------------------------

def test_synth_row_count(tmp_path):
    out = synth_scene(tmp_path, duration=60.0)
    rows = open(os.path.join(out, "imu.csv")).read().strip().splitlines()
    assert len(rows) == 12_001  # header + 12,000 samples
    assert os.path.exists(os.path.join(out, "calib.json"))
    assert os.path.exists(os.path.join(out, "config_snapshot.cfg"))


def test_synth_is_deterministic(tmp_path):
    a = synth_scene(tmp_path, name="a", duration=2.0, gyro_bias="0.01,0,0")
    b = synth_scene(tmp_path, name="b", duration=2.0, gyro_bias="0.01,0,0")
    for fname in ("imu.csv", "gt.csv", "calib.json"):
        assert (open(os.path.join(a, fname)).read()
                == open(os.path.join(b, fname)).read())


def test_synth_zero_rate_is_data_error(tmp_path):
    assert run("synth", "--rate", "0", "--seed", "1",
               "--out", str(tmp_path / "x")) == 2


def test_synth_records_injected_calibration(tmp_path):
    out = synth_scene(tmp_path, duration=2.0, misalign=0.03,
                      gyro_bias="0.01,-0.02,0.005")
    calib = json.load(open(os.path.join(out, "calib.json")))
    assert np.max(np.abs(np.array(calib["C_omega"]) - np.eye(3))) <= 0.03
    assert calib["bias"][:3] == [0.01, -0.02, 0.005]


# -- usage -------------------------------------------------------------------------

def test_unknown_subcommand_is_usage_error():
    assert run("frobnicate") == 1


def test_missing_required_flag_is_usage_error():
    assert run("synth") == 1  # --seed is required


def test_help_exits_cleanly():
    assert run("--help") == 0


def test_missing_data_is_data_error(tmp_path):
    assert run("train", "--imu", str(tmp_path / "none.csv"),
               "--gt", str(tmp_path / "none.csv"),
               "--out", str(tmp_path / "run")) == 2


def test_evaluate_rejects_unknown_method(tmp_path):
    scene = synth_scene(tmp_path, duration=2.0)
    assert run("evaluate", "--imu", os.path.join(scene, "imu.csv"),
               "--gt", os.path.join(scene, "gt.csv"),
               "--methods", "banana", "--out", str(tmp_path / "rep")) == 2


# -- training workflows ------------------------------------------------------------

def train_args(scene, outdir):
    return ["--imu", os.path.join(scene, "imu.csv"),
            "--gt", os.path.join(scene, "gt.csv"),
            "--out", outdir, "--window-len", "608",
            "--val-every", "1", "--quiet"]


def test_train_smoke_writes_checkpoint_and_log(tmp_path):
    scene = synth_scene(tmp_path, duration=20.0, gyro_bias="0.02,0,0")
    outdir = str(tmp_path / "run")
    assert run("train", *train_args(scene, outdir), "--epochs", "2") == 0
    assert os.path.exists(os.path.join(outdir, "checkpoint.json"))
    lines = open(os.path.join(outdir, "metrics.csv")).read().strip().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,lr"
    assert [int(l.split(",")[0]) for l in lines[1:]] == [1, 2]


def test_train_resume_continues_log_without_gaps(tmp_path):
    scene = synth_scene(tmp_path, duration=20.0, gyro_bias="0.02,0,0")
    outdir = str(tmp_path / "run")
    assert run("train", *train_args(scene, outdir), "--epochs", "2") == 0
    assert run("train", *train_args(scene, outdir), "--epochs", "4",
               "--resume", os.path.join(outdir, "checkpoint_last.json")) == 0
    lines = open(os.path.join(outdir, "metrics.csv")).read().strip().splitlines()
    epochs = [int(l.split(",")[0]) for l in lines[1:]]
    assert epochs == [1, 2, 3, 4]


def test_calibrate_writes_recovered_calibration(tmp_path):
    scene = synth_scene(tmp_path, duration=20.0, gyro_bias="0.02,-0.01,0.015")
    outdir = str(tmp_path / "cal")
    assert run("calibrate", *train_args(scene, outdir), "--epochs", "30",
               "--restart-period", "30") == 0
    cal = json.load(open(os.path.join(outdir, "calibration.json")))
    assert np.array(cal["C_omega"]).shape == (3, 3)
    assert len(cal["gyro_bias"]) == 3


def test_train_is_reproducible(tmp_path):
    scene = synth_scene(tmp_path, duration=20.0, gyro_bias="0.02,0,0")
    for name in ("r1", "r2"):
        assert run("train", *train_args(scene, str(tmp_path / name)),
                   "--epochs", "2", "--seed", "5") == 0
    m1 = open(tmp_path / "r1" / "metrics.csv").read()
    m2 = open(tmp_path / "r2" / "metrics.csv").read()
    assert m1 == m2
    c1 = open(tmp_path / "r1" / "checkpoint.json").read()
    c2 = open(tmp_path / "r2" / "checkpoint.json").read()
    assert c1 == c2


# -- evaluate / report -------------------------------------------------------------

def test_evaluate_and_report_roundtrip(tmp_path):
    scene = synth_scene(tmp_path, duration=40.0, gyro_bias="0.02,0,0")
    rep = str(tmp_path / "rep")
    assert run("evaluate", "--imu", os.path.join(scene, "imu.csv"),
               "--gt", os.path.join(scene, "gt.csv"),
               "--methods", "raw,zero", "--distances", "7,21",
               "--out", rep) == 0
    aoe_rows = open(os.path.join(rep, "aoe.csv")).read().strip().splitlines()
    assert len(aoe_rows) == 3  # header + 2 methods
    regen = str(tmp_path / "regen")
    assert run("report", "--summary", os.path.join(rep, "summary.json"),
               "--out", regen) == 0
    assert (open(os.path.join(regen, "aoe.csv")).read()
            == open(os.path.join(rep, "aoe.csv")).read())


def test_output_root_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path))
    monkeypatch.chdir(tmp_path)
    assert run("synth", "--duration", "1", "--rate", "200", "--seed", "1",
               "--out", "envscene") == 0
    assert (tmp_path / "envscene" / "imu.csv").exists()


def test_config_file_split_workflow(tmp_path):
    for name, seed in (("s1", 1), ("s2", 2)):
        synth_scene(tmp_path, name=name, duration=12.0, seed=seed,
                    gyro_bias="0.02,0,0")
    cfg = tmp_path / "split.cfg"
    cfg.write_text(
        f"format = synth\n"
        f"data_root = {tmp_path}\n"
        "split.s1 = train\n"
        "split.s2 = val\n"
        "train.epochs = 1\n"
        "train.window_len = 608\n"
        "train.val_every = 1\n"
    )
    outdir = str(tmp_path / "cfgrun")
    assert run("train", "--config", str(cfg), "--out", outdir,
               "--quiet") == 0
    assert os.path.exists(os.path.join(outdir, "checkpoint.json"))
