"""End-to-end command-line tests; every call goes through a subprocess."""

import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from vs30net import datapipe, evalreport, sigprep

RUN_CFG = """\
manifest = corpus
folds.file = folds.csv
model.encoder_kind = resnet
model.domain = frequency
model.duration_s = 15
train.epochs = 2
train.batch_size = 16
train.base_lr = 1e-3
train.dropout_rate = 0.0
train.val_fraction = 0.1
train.seed = 3
"""


def vs30(*argv, cwd, env=None):
    full_env = os.environ.copy()
    full_env.setdefault("VS30_THREADS", "1")
    if env:
        full_env.update(env)
    return subprocess.run(
        [sys.executable, "-m", "vs30net.cli", *map(str, argv)],
        cwd=cwd, env=full_env, capture_output=True, text=True)


def ok(result):
    assert result.returncode == 0, result.stderr + result.stdout
    return result


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """corpus + folds + per-fold train/evaluate runs + a pretrained encoder."""
    root = tmp_path_factory.mktemp("cli")
    ok(vs30("synth", "--stations", 15, "--events", 3, "--out", "corpus",
            "--seed", 4, cwd=root))
    ok(vs30("split", "--manifest", "corpus", "--folds", 3, "--seed", 1,
            "--out", "folds.csv", cwd=root))
    (root / "run.cfg").write_text(RUN_CFG)
    (root / "pre.cfg").write_text(
        RUN_CFG.replace("folds.file = folds.csv\n", "")
        .replace("train.epochs = 2", "train.epochs = 1"))
    (root / "xfer.cfg").write_text(
        RUN_CFG + "pretrained = pre/checkpoint.ckpt\n")
    for fold in range(3):
        ok(vs30("train", "--config", "run.cfg", "--fold", fold,
                "--out", f"run{fold}", cwd=root))
        ok(vs30("evaluate", "--checkpoint", f"run{fold}/checkpoint.ckpt",
                "--manifest", "corpus", "--fold", fold,
                "--out", f"eval{fold}", cwd=root))
    ok(vs30("pretrain", "--config", "pre.cfg", "--out", "pre", cwd=root))
    ok(vs30("transfer-train", "--config", "xfer.cfg", "--fold", 0,
            "--out", "xfer0", cwd=root))
    return root


# -------------------------------------------------------------------- synth

def test_synth_writes_a_valid_manifest(tmp_path):
    r = ok(vs30("synth", "--stations", 20, "--events", 10,
                "--out", "corpus", "--seed", 0, cwd=tmp_path))
    assert "20 stations" in r.stdout
    man = datapipe.read_manifest(tmp_path / "corpus")
    assert len(man.stations) == 20 and len(man.events) == 10
    assert len(man.rows) > 0
    man.load_record(man.rows[0])  # waveform files readable


def test_synth_same_seed_is_byte_identical(tmp_path):
    ok(vs30("synth", "--stations", 8, "--events", 2, "--out", "a",
            "--seed", 7, cwd=tmp_path))
    ok(vs30("synth", "--stations", 8, "--events", 2, "--out", "b",
            "--seed", 7, cwd=tmp_path))
    a_files = sorted(p.relative_to(tmp_path / "a")
                     for p in (tmp_path / "a").rglob("*") if p.is_file())
    b_files = sorted(p.relative_to(tmp_path / "b")
                     for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert a_files == b_files and a_files
    for rel in a_files:
        assert (tmp_path / "a" / rel).read_bytes() == \
            (tmp_path / "b" / rel).read_bytes(), rel


def test_synth_rejects_zero_stations(tmp_path):
    r = vs30("synth", "--stations", 0, "--events", 5, "--out", "x",
             cwd=tmp_path)
    assert r.returncode == 2
    assert len(r.stderr.strip().splitlines()) == 1
    assert not (tmp_path / "x").exists()


# -------------------------------------------------------------------- split

def test_split_plan_is_loadable_and_disjoint(pipeline):
    plan = datapipe.read_fold_plan(pipeline / "folds.csv")
    assert plan.n_folds == 3
    for fold in range(3):
        assert not plan.test_stations(fold) & plan.train_stations(fold)


# ----------------------------------------------------------------- training

def test_train_run_dir_contents(pipeline):
    run = pipeline / "run0"
    for name in ("checkpoint.ckpt", "trace.csv", "config.txt", "run.log"):
        assert (run / name).is_file(), name
    text = (run / "config.txt").read_text()
    assert "# config_hash: " in text
    assert "train.phase = single" in text


def test_train_is_idempotent_except_log(pipeline):
    ok(vs30("train", "--config", "run.cfg", "--fold", 0, "--out", "run0b",
            cwd=pipeline))
    for name in ("checkpoint.ckpt", "trace.csv", "config.txt"):
        assert (pipeline / "run0" / name).read_bytes() == \
            (pipeline / "run0b" / name).read_bytes(), name


def test_transfer_manifest_lists_moved_parameters(pipeline):
    lines = (pipeline / "xfer0" / "transfer_manifest.txt").read_text()
    lines = lines.strip().splitlines()
    copied = [l.split(" ", 1)[1] for l in lines if l.startswith("copied ")]
    reinit = [l.split(" ", 1)[1]
              for l in lines if l.startswith("reinitialized ")]
    assert copied and all(n.startswith("encoder.") for n in copied)
    assert reinit and all(n.startswith("head.") for n in reinit)


def test_train_requires_fold_flag(pipeline):
    r = vs30("train", "--config", "run.cfg", "--out", "nofold", cwd=pipeline)
    assert r.returncode == 2


def test_transfer_train_without_pretrained_key(pipeline):
    r = vs30("transfer-train", "--config", "run.cfg", "--fold", 0,
             "--out", "xbad", cwd=pipeline)
    assert r.returncode == 2
    assert "pretrained" in r.stderr


# --------------------------------------------------------------- evaluation

def test_evaluate_outputs(pipeline):
    out = pipeline / "eval0"
    for name in ("class_summary.csv", "station_errors.csv", "histogram.csv",
                 "error_map.geojson", "run.log", "config.txt"):
        assert (out / name).is_file(), name
    stations = evalreport.read_station_errors(out / "station_errors.csv")
    plan = datapipe.read_fold_plan(pipeline / "folds.csv")
    assert {s.station_id for s in stations} <= plan.test_stations(0)


def test_evaluate_fold_mismatch(pipeline):
    r = vs30("evaluate", "--checkpoint", "run0/checkpoint.ckpt",
             "--manifest", "corpus", "--fold", 1, "--out", "evbad",
             cwd=pipeline)
    assert r.returncode == 3
    assert "held out fold 0" in r.stderr


def test_evaluate_rejects_pretraining_checkpoint(pipeline):
    r = vs30("evaluate", "--checkpoint", "pre/checkpoint.ckpt",
             "--manifest", "corpus", "--fold", 0, "--out", "evpre",
             cwd=pipeline)
    assert r.returncode == 3
    assert "output_dim" in r.stderr


# ------------------------------------------------------------------- report

def test_report_pools_folds(pipeline):
    r = ok(vs30("report", "--runs", "eval0", "eval1", "eval2",
                "--out", "merged", cwd=pipeline))
    lines = r.stdout.strip().splitlines()
    assert lines[0].split() == ["Site", "Class", "No.", "of", "Stations",
                                "Absolute", "Mean", "Error", "%"]
    overall = lines[-1].split()
    assert overall[0] == "Overall"
    merged_n, merged_err = int(overall[1]), float(overall[2])

    total = 0
    weighted = 0.0
    for fold in range(3):
        rows = evalreport.read_class_summary(
            pipeline / f"eval{fold}" / "class_summary.csv")
        _, n, err = rows[-1]
        total += n
        weighted += n * err
    assert merged_n == total
    assert abs(merged_err - weighted / total) <= 1e-6

    disk = evalreport.read_class_summary(pipeline / "merged" /
                                         "class_summary.csv")
    assert disk[-1][1] == merged_n


def test_report_duplicate_runs_fail(pipeline):
    r = vs30("report", "--runs", "eval0", "eval0", cwd=pipeline)
    assert r.returncode == 3
    assert "duplicate" in r.stderr


# ------------------------------------------------------------------ predict

def test_predict_prints_a_velocity(pipeline):
    man = datapipe.read_manifest(pipeline / "corpus")
    rec = man.rows[0]
    r = ok(vs30("predict", "--checkpoint", "run0/checkpoint.ckpt",
                "--record", Path("corpus") / rec.waveform_path,
                "--lat", 39.0, "--lon", 28.0, cwd=pipeline))
    value = float(r.stdout.strip())
    assert np.isfinite(value) and value > 0


def test_predict_short_record_exits_3(pipeline, tmp_path):
    rec = sigprep.WaveformRecord(
        record_id="tiny", station_id="S", event_id="E", sample_rate_hz=100.0,
        channels=np.zeros((3, 400), dtype=np.float32))
    datapipe.write_sm3c(tmp_path / "short.sm3c", rec)
    r = vs30("predict", "--checkpoint", "run0/checkpoint.ckpt",
             "--record", tmp_path / "short.sm3c", "--lat", 39, "--lon", 28,
             cwd=pipeline)
    assert r.returncode == 3
    assert "rejected" in r.stderr
    assert len(r.stderr.strip().splitlines()) == 1


# ------------------------------------------------------------------- global

def test_help_documents_every_flag(pipeline):
    flags = {
        "synth": ["--stations", "--events", "--out", "--seed", "--class-skew"],
        "split": ["--manifest", "--folds", "--seed", "--out"],
        "train": ["--config", "--fold", "--out", "--set"],
        "pretrain": ["--config", "--out", "--set"],
        "transfer-train": ["--config", "--fold", "--out", "--set"],
        "evaluate": ["--checkpoint", "--manifest", "--fold", "--out"],
        "predict": ["--checkpoint", "--record", "--lat", "--lon"],
        "report": ["--runs", "--out"],
    }
    top = ok(vs30("--help", cwd=pipeline)).stdout
    for command, wanted in flags.items():
        assert command in top
        text = ok(vs30(command, "--help", cwd=pipeline)).stdout
        for flag in wanted:
            assert flag in text, (command, flag)


def test_unknown_flag_fails(pipeline):
    r = vs30("synth", "--stations", 3, "--events", 1, "--out", "x",
             "--frobnicate", cwd=pipeline)
    assert r.returncode == 2


def test_bad_threads_env(pipeline):
    r = vs30("--help", cwd=pipeline, env={"VS30_THREADS": "many"})
    assert r.returncode == 2
    assert "VS30_THREADS" in r.stderr


def test_missing_config_file(pipeline):
    r = vs30("train", "--config", "absent.cfg", "--fold", 0, "--out", "y",
             cwd=pipeline)
    assert r.returncode == 2
    assert "absent.cfg" in r.stderr
