"""Acceptance gate: ten correctness-and-budget criteria, one test each.

Run `pytest tests/test_acceptance.py -s` to see one PASS/FAIL line per
criterion. Each criterion has a wall-clock budget that is asserted, so
regressions in speed fail as loudly as regressions in math.
"""

import contextlib
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from vs30net import datapipe, evalreport, sigprep, trainer
from vs30net import ndnet as nd
from vs30net.encoders import SPECTRAL_BINS, ModelSpec, build_model
from vs30net.ndnet import no_grad

import oracles as orc

ARCHITECTURES = [("resnet", "frequency"), ("resnet", "time"),
                 ("tcn", "frequency"), ("tcn", "time")]
DURATIONS = (15, 30, 60)
SPECTRAL_FRAMES = {15: 29, 30: 59, 60: 119}


@contextlib.contextmanager
def criterion(name: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"\nFAIL {name}")
        raise
    elapsed = time.perf_counter() - start
    if elapsed >= budget_s:
        print(f"\nFAIL {name}: took {elapsed:.1f}s, budget {budget_s:.0f}s")
        raise AssertionError(f"{name} exceeded its {budget_s:.0f}s budget "
                             f"({elapsed:.1f}s)")
    print(f"\nPASS {name} ({elapsed:.1f}s / {budget_s:.0f}s)")


def t(x, grad=True):
    return nd.Tensor(np.asarray(x, dtype=np.float32), requires_grad=grad)


def spec_of(kind, domain, dur, **kw):
    return ModelSpec(encoder_kind=kind, domain=domain, duration_s=dur, **kw)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    """10 records from 10 stations and 1 event; fold 0 trains on 8."""
    root = tmp_path_factory.mktemp("accept_small")
    man = datapipe.synth_corpus(root, 10, 1, seed=3, cutoff_km=10000.0)
    plan = datapipe.plan_folds(man.labeled_stations(), n_folds=5, seed=0)
    return man, plan


# --------------------------------------------------------------- criterion 1

def _fd_check(tensors, arrays, f, context):
    for i, tensor in enumerate(tensors):
        ok, worst = orc.grads_agree(tensor.grad, orc.fd_grad(f, arrays, i),
                                    rel=1e-4)
        assert ok, f"{context}: arg {i} rel err {worst:.2e}"


def _check_conv1d(seed):
    rng = np.random.default_rng(1000 + seed)
    pad = ("causal", "same", "none")[seed % 3]
    stride = 1 if pad == "causal" else int(rng.integers(1, 3))
    kernel, dil = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    span = dil * (kernel - 1) + 1
    n, cin, cout = (int(rng.integers(1, 4)) for _ in range(3))
    length = span + int(rng.integers(0, 9))
    x = rng.normal(size=(n, cin, length))
    w = rng.normal(size=(cout, cin, kernel))
    b = rng.normal(size=(cout,))
    tx, tw, tb = t(x), t(w), t(b)
    nd.tsum(nd.square(nd.conv1d(tx, tw, tb, dilation=dil, stride=stride,
                                padding=pad))).backward()

    def f(xx, ww, bb):
        return float((orc.conv1d_ref(xx, ww, bb, dil, stride, pad) ** 2).sum())

    _fd_check((tx, tw, tb), (x, w, b), f, f"conv1d seed {seed}")


def _check_conv2d(seed):
    rng = np.random.default_rng(2000 + seed)
    pad = ("same", "none")[seed % 2]
    stride = int(rng.integers(1, 3))
    kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    n, cin, cout = (int(rng.integers(1, 3)) for _ in range(3))
    h, w_ = kh + int(rng.integers(0, 4)), kw + int(rng.integers(0, 4))
    x = rng.normal(size=(n, cin, h, w_))
    w = rng.normal(size=(cout, cin, kh, kw))
    b = rng.normal(size=(cout,))
    tx, tw, tb = t(x), t(w), t(b)
    nd.tsum(nd.square(nd.conv2d(tx, tw, tb, stride=stride,
                                padding=pad))).backward()

    def f(xx, ww, bb):
        return float((orc.conv2d_ref(xx, ww, bb, stride, pad) ** 2).sum())

    _fd_check((tx, tw, tb), (x, w, b), f, f"conv2d seed {seed}")


def _check_dense(seed):
    rng = np.random.default_rng(3000 + seed)
    n, fin, fout = (int(rng.integers(1, 6)) for _ in range(3))
    x = rng.normal(size=(n, fin))
    w = rng.normal(size=(fout, fin))
    b = rng.normal(size=(fout,))
    tx, tw, tb = t(x), t(w), t(b)
    nd.tsum(nd.square(nd.dense(tx, tw, tb))).backward()

    def f(xx, ww, bb):
        return float((orc.dense_ref(xx, ww, bb) ** 2).sum())

    _fd_check((tx, tw, tb), (x, w, b), f, f"dense seed {seed}")


def _check_max_pool(seed):
    rng = np.random.default_rng(4000 + seed)
    n, c = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    if seed % 2 == 0:
        length = int(rng.integers(4, 12))
        window = int(rng.integers(1, length + 1))
        shape = (n, c, length)
    else:
        h, w_ = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        window = (int(rng.integers(1, h + 1)), int(rng.integers(1, w_ + 1)))
        shape = (n, c, h, w_)
    # distinct values with gaps far above the probe step keep argmax stable
    x = (rng.permutation(np.prod(shape)).astype(np.float64) * 0.1
         ).reshape(shape)
    tx = t(x)
    nd.tsum(nd.square(nd.max_pool(tx, window))).backward()

    def f(xx):
        if isinstance(window, int):
            l_out = xx.shape[2] // window
            win = xx[:, :, :l_out * window].reshape(n, c, l_out, window)
            return float((win.max(axis=3) ** 2).sum())
        wh, ww = window
        h_out, w_out = xx.shape[2] // wh, xx.shape[3] // ww
        win = xx[:, :, :h_out * wh, :w_out * ww]
        win = win.reshape(n, c, h_out, wh, w_out, ww)
        return float((win.max(axis=(3, 5)) ** 2).sum())

    _fd_check((tx,), (x,), f, f"max_pool seed {seed}")


def _check_batch_norm(seed):
    rng = np.random.default_rng(5000 + seed)
    c = int(rng.integers(1, 4))
    spatial = ((), (int(rng.integers(2, 6)),),
               (int(rng.integers(2, 4)), int(rng.integers(2, 4))))[seed % 3]
    shape = (int(rng.integers(2, 5)), c) + spatial
    x = rng.normal(size=shape)
    gamma = rng.normal(size=(c,)) + 1.5
    beta = rng.normal(size=(c,))
    tx, tg, tb = t(x), t(gamma), t(beta)
    rm, rv = t(np.zeros(c), grad=False), t(np.ones(c), grad=False)
    nd.tsum(nd.square(nd.batch_norm(tx, tg, tb, rm, rv, "train"))).backward()

    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)

    def f(xx, gg, bb):
        mean = xx.mean(axis=axes).reshape(bshape)
        var = xx.var(axis=axes).reshape(bshape)
        xhat = (xx - mean) / np.sqrt(var + 1e-5)
        return float(((gg.reshape(bshape) * xhat + bb.reshape(bshape)) ** 2)
                     .sum())

    _fd_check((tx, tg, tb), (x, gamma, beta), f, f"batch_norm seed {seed}")


def _check_relu(seed):
    rng = np.random.default_rng(6000 + seed)
    shape = tuple(int(rng.integers(1, 5)) for _ in range(int(rng.integers(1, 4))))
    x = rng.uniform(0.05, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    tx = t(x)
    nd.tsum(nd.square(nd.relu(tx))).backward()

    def f(xx):
        return float((np.maximum(xx, 0.0) ** 2).sum())

    _fd_check((tx,), (x,), f, f"relu seed {seed}")


def _check_dropout(seed):
    rng = np.random.default_rng(7000 + seed)
    shape = (int(rng.integers(2, 5)), int(rng.integers(2, 6)))
    rate = (0.2, 0.5)[seed % 2]
    x = rng.uniform(0.5, 1.5, size=shape)
    tx = t(x)
    out = nd.dropout(tx, rate, "train", rng=np.random.default_rng(70 + seed))
    nd.tsum(nd.square(out)).backward()
    keep = out.data != 0.0  # inputs are strictly positive

    def f(xx):
        return float(((xx * keep / (1.0 - rate)) ** 2).sum())

    _fd_check((tx,), (x,), f, f"dropout seed {seed}")


def _check_loss(seed):
    rng = np.random.default_rng(8000 + seed)
    kind = ("MSE", "MAE")[seed % 2]
    shape = (int(rng.integers(2, 5)), int(rng.integers(1, 4)))
    pred = rng.normal(size=shape)
    # keep |pred - target| away from MAE's kink
    target = pred - rng.uniform(0.05, 1.0, size=shape) * \
        rng.choice([-1.0, 1.0], size=shape)
    tp, tt = t(pred), t(target)
    nd.loss(tp, tt, kind).backward()

    def f(pp, gg):
        diff = pp - gg
        return float((diff ** 2).mean() if kind == "MSE"
                     else np.abs(diff).mean())

    _fd_check((tp, tt), (pred, target), f, f"loss {kind} seed {seed}")


def _check_global_avg_pool(seed):
    rng = np.random.default_rng(9000 + seed)
    ndim = 3 + seed % 2
    shape = tuple(int(rng.integers(2, 5)) for _ in range(ndim))
    x = rng.normal(size=shape)
    tx = t(x)
    nd.tsum(nd.square(nd.global_avg_pool(tx))).backward()
    axes = tuple(range(2, ndim))

    def f(xx):
        return float((xx.mean(axis=axes) ** 2).sum())

    _fd_check((tx,), (x,), f, f"global_avg_pool seed {seed}")


def _check_take_time_index(seed):
    rng = np.random.default_rng(9500 + seed)
    n, c, length = (int(rng.integers(2, 6)) for _ in range(3))
    index = int(rng.integers(-length, length))
    x = rng.normal(size=(n, c, length))
    tx = t(x)
    nd.tsum(nd.square(nd.take_time_index(tx, index))).backward()

    def f(xx):
        return float((xx[:, :, index % length] ** 2).sum())

    _fd_check((tx,), (x,), f, f"take_time_index seed {seed}")


def test_gradient_suite():
    checks = (_check_conv1d, _check_conv2d, _check_dense, _check_max_pool,
              _check_batch_norm, _check_relu, _check_dropout, _check_loss,
              _check_global_avg_pool, _check_take_time_index)
    with criterion("gradient suite: every layer vs finite differences on "
                   "20 random shapes each", 60):
        for check in checks:
            for seed in range(20):
                check(seed)


# --------------------------------------------------------------- criterion 2

def test_causality_suite():
    with criterion("causality: time-domain TCN ignores samples after the "
                   "readout index, all durations", 60):
        for dur in DURATIONS:
            spec = spec_of("tcn", "time", dur)
            model = build_model(spec, np.random.default_rng(20 + dur))
            length = spec.input_shape[-1]
            pivot = length // 2
            x = np.random.default_rng(dur).normal(
                size=(2,) + spec.input_shape).astype(np.float32)
            with no_grad():
                base = model.encode(x, "eval", readout_index=pivot).data
                bumped = x.copy()
                bumped[:, :, pivot + 1:] += 7.0
                after = model.encode(bumped, "eval",
                                     readout_index=pivot).data
                assert np.array_equal(base, after), f"{dur}s leaks"
                bumped2 = x.copy()
                bumped2[:, :, pivot] += 1.0
                changed = model.encode(bumped2, "eval",
                                       readout_index=pivot).data
                assert not np.array_equal(base, changed), f"{dur}s inert"


# --------------------------------------------------------------- criterion 3

def test_shape_suite(small_corpus):
    man, _ = small_corpus
    with criterion("shapes: 12 model configs finite; spectral volumes "
                   "Dx51x3 with D in {29, 59, 119}", 60):
        rec = sigprep.normalize_rate(man.load_record(man.rows[0]))
        for dur in DURATIONS:
            window = sigprep.crop_around_pga(rec, dur)
            assert isinstance(window, sigprep.WindowedSample)
            vol = sigprep.to_spectral(window)
            assert vol.data.shape == (SPECTRAL_FRAMES[dur], SPECTRAL_BINS, 3)
        for kind, domain in ARCHITECTURES:
            for dur in DURATIONS:
                spec = spec_of(kind, domain, dur)
                model = build_model(spec, np.random.default_rng(30))
                x = np.random.default_rng(31).normal(
                    size=(2,) + spec.input_shape).astype(np.float32)
                coords = np.array([[0.3, 0.7], [0.6, 0.2]], dtype=np.float32)
                with no_grad():
                    out = model.forward(x, coords, "eval")
                assert out.data.shape == (2, 1)
                assert np.all(np.isfinite(out.data)), (kind, domain, dur)


# --------------------------------------------------------------- criterion 4

def test_fold_disjointness_suite(tmp_path):
    with criterion("fold disjointness: 100 random corpora, no test-station "
                   "record in its fold's training set", 60):
        rng = np.random.default_rng(44)
        for i in range(100):
            n_st = int(rng.integers(8, 40))
            man = datapipe.synth_corpus(
                tmp_path / f"c{i}", n_st, int(rng.integers(1, 5)),
                seed=int(rng.integers(0, 10_000)),
                unlabeled_fraction=float(rng.choice([0.0, 0.2])),
                write_waveforms=False)
            labeled = {s.station_id for s in man.labeled_stations()}
            n_folds = int(rng.integers(2, min(8, len(labeled)) + 1))
            plan = datapipe.plan_folds(man.labeled_stations(),
                                       n_folds=n_folds,
                                       seed=int(rng.integers(0, 10_000)))
            assert set(plan.assignment) == labeled
            for fold in range(n_folds):
                train_rows, test_rows = datapipe.split_records(man, plan,
                                                               fold)
                train_st = {r.station_id for r in train_rows}
                test_st = {r.station_id for r in test_rows}
                assert not train_st & test_st
                assert test_st <= plan.test_stations(fold)
                assert train_st <= plan.train_stations(fold)
                train_ids = {r.record_id for r in train_rows}
                assert not any(r.record_id in train_ids for r in test_rows)


# --------------------------------------------------------------- criterion 5

def test_overfit_check(small_corpus):
    man, plan = small_corpus
    with criterion("overfit: each architecture drives 8-sample training MSE "
                   "below 1% of start within 200 epochs", 300):
        for kind, domain in ARCHITECTURES:
            cfg = trainer.TrainConfig(
                phase="single", target="vs30", epochs=200, batch_size=8,
                base_lr=1e-2, dropout_rate=0.0, val_fraction=0.0, seed=1)
            res = trainer.train_single_phase(man, plan, 0,
                                             spec_of(kind, domain, 15), cfg)
            losses = [loss for _, split, loss, _ in res.trace
                      if split == "train"]
            ratio = min(losses[1:]) / losses[0]
            assert ratio < 0.01, (kind, domain, ratio)


# --------------------------------------------------------------- criterion 6

def test_learnability_check(tmp_path):
    with criterion("learnability: 5-fold ResNet/frequency/15s at most 0.7x "
                   "the mean-predictor baseline on 200 stations", 900):
        man = datapipe.synth_corpus(tmp_path / "corpus", 200, 20, seed=0)
        plan = datapipe.plan_folds(man.labeled_stations(), n_folds=5, seed=0)
        spec = spec_of("resnet", "frequency", 15)
        cfg = trainer.TrainConfig(phase="single", target="vs30", epochs=3,
                                  batch_size=64, base_lr=1e-3,
                                  dropout_rate=0.1, val_fraction=0.1, seed=0)
        model_folds, baseline_folds = [], []
        for fold in range(5):
            res = trainer.train_single_phase(man, plan, fold, spec, cfg)
            train_rows, test_rows = datapipe.split_records(man, plan, fold)
            rep = evalreport.evaluate(res.checkpoint, man, test_rows)
            labels = [man.stations[r.station_id].vs30_mps for r in train_rows]
            base = evalreport.evaluate_predictor(
                evalreport.baseline_mean_predictor(labels), man, test_rows,
                spec.duration_s)
            model_folds.append(rep.stations)
            baseline_folds.append(base.stations)
        pooled = evalreport.merge_station_errors(model_folds)
        pooled_base = evalreport.merge_station_errors(baseline_folds)
        ratio = (pooled.overall_abs_mean_error
                 / pooled_base.overall_abs_mean_error)
        print(f"  model {pooled.overall_abs_mean_error:.2f}% vs baseline "
              f"{pooled_base.overall_abs_mean_error:.2f}% (ratio "
              f"{ratio:.3f})")
        assert ratio <= 0.7


# --------------------------------------------------------------- criterion 7

def test_transfer_fidelity(small_corpus):
    man, plan = small_corpus
    with criterion("transfer fidelity: fine-tune epoch 0 reproduces "
                   "pretrained encoder bitwise; manifest = encoder set", 300):
        pcfg = trainer.TrainConfig(phase="pretrain", target="epicenter",
                                   epochs=2, batch_size=8, base_lr=1e-3,
                                   dropout_rate=0.0, val_fraction=0.0, seed=4)
        pck = trainer.pretrain_epicenter(
            man, spec_of("resnet", "frequency", 15, output_dim=2),
            pcfg).checkpoint

        fcfg = trainer.TrainConfig(phase="finetune", target="vs30", epochs=1,
                                   batch_size=8, base_lr=1e-3,
                                   dropout_rate=0.0, val_fraction=0.0, seed=5)
        model, moved = trainer.transfer_from_checkpoint(
            pck, spec_of("resnet", "frequency", 15), fcfg, 0)
        assert sorted(moved["copied"]) == sorted(model.encoder_param_names())
        assert sorted(moved["reinitialized"]) == \
            sorted(model.head_param_names())

        rows, _ = datapipe.split_records(man, plan, 0)
        ds, *_ = trainer.assemble_dataset(man, rows, model.spec, fcfg,
                                          channel_stats=pck.channel_stats,
                                          box=pck.coord_box,
                                          target_stats=pck.target_stats)
        pre = trainer.model_from_checkpoint(pck)
        with no_grad():
            assert np.array_equal(pre.encode(ds.inputs, "eval").data,
                                  model.encode(ds.inputs, "eval").data)


# --------------------------------------------------------------- criterion 8

def test_schedule_check(small_corpus):
    man, plan = small_corpus
    with criterion("schedule: logged lr at epochs 4/5/10/20 equals "
                   "1e-5/9e-6/8.1e-6/7.29e-6 exactly", 60):
        cfg = trainer.TrainConfig(phase="single", target="vs30", epochs=20,
                                  batch_size=8, dropout_rate=0.0,
                                  val_fraction=0.0, seed=2)
        assert (cfg.base_lr, cfg.lr_decay, cfg.decay_epochs) == \
            (1e-5, 0.9, (5, 10, 20))
        res = trainer.train_single_phase(man, plan, 0,
                                         spec_of("resnet", "frequency", 15),
                                         cfg)
        logged = {epoch: lr for epoch, split, _, lr in res.trace
                  if split == "train"}
        assert logged[4] == 1e-5
        assert logged[5] == 9e-6
        assert logged[10] == 8.1e-6
        assert logged[20] == 7.29e-6


# --------------------------------------------------------------- criterion 9

def test_format_round_trips(small_corpus, tmp_path):
    man, plan = small_corpus
    with criterion("format round trips: waveform, checkpoint, manifest, "
                   "and report files are byte-stable", 60):
        # waveform container
        src = Path(man.base_dir) / man.rows[0].waveform_path
        rate, channels = datapipe.read_sm3c(src)
        rec = sigprep.WaveformRecord(record_id="copy", station_id="s",
                                     event_id="e", sample_rate_hz=rate,
                                     channels=channels)
        datapipe.write_sm3c(tmp_path / "copy.sm3c", rec)
        assert (tmp_path / "copy.sm3c").read_bytes() == src.read_bytes()

        # manifest tables
        datapipe.write_manifest(datapipe.read_manifest(man.base_dir),
                                tmp_path / "again")
        for name in ("manifest.csv", "stations.csv", "events.csv"):
            assert (tmp_path / "again" / name).read_bytes() == \
                (Path(man.base_dir) / name).read_bytes(), name

        # checkpoint container
        cfg = trainer.TrainConfig(phase="single", target="vs30", epochs=1,
                                  batch_size=8, base_lr=1e-3,
                                  dropout_rate=0.0, val_fraction=0.0, seed=6)
        ck = trainer.train_single_phase(
            man, plan, 0, spec_of("resnet", "frequency", 15), cfg).checkpoint
        trainer.save_checkpoint(ck, tmp_path / "a.ckpt")
        trainer.save_checkpoint(trainer.load_checkpoint(tmp_path / "a.ckpt"),
                                tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == \
            (tmp_path / "b.ckpt").read_bytes()

        # report files
        rng = np.random.default_rng(9)
        stations = [
            evalreport.station_error(
                f"S{i:03d}", float(rng.uniform(38, 40)),
                float(rng.uniform(26, 30)), float(rng.uniform(150, 1600)),
                rng.uniform(100, 1800, size=int(rng.integers(1, 4))))
            for i in range(12)]
        report = evalreport.report_from_stations(stations)
        first = evalreport.export_report(report, tmp_path / "rep_a")
        rebuilt = evalreport.report_from_stations(
            evalreport.read_station_errors(first["station_errors"]))
        second = evalreport.export_report(rebuilt, tmp_path / "rep_b")
        for key in first:
            assert first[key].read_bytes() == second[key].read_bytes(), key


# -------------------------------------------------------------- criterion 10

def _end_to_end(root: Path) -> None:
    def vs30(*argv):
        result = subprocess.run(
            [sys.executable, "-m", "vs30net.cli", *map(str, argv)],
            cwd=root, capture_output=True, text=True)
        assert result.returncode == 0, result.stderr
        return result

    root.mkdir(parents=True, exist_ok=True)
    (root / "run.cfg").write_text(
        "manifest = corpus\nfolds.file = folds.csv\n"
        "model.encoder_kind = resnet\nmodel.domain = frequency\n"
        "model.duration_s = 15\ntrain.epochs = 2\ntrain.batch_size = 16\n"
        "train.base_lr = 1e-3\ntrain.dropout_rate = 0.0\n"
        "train.val_fraction = 0.1\ntrain.seed = 3\n")
    vs30("synth", "--stations", 15, "--events", 3, "--out", "corpus",
         "--seed", 4)
    vs30("split", "--manifest", "corpus", "--folds", 3, "--seed", 1,
         "--out", "folds.csv")
    for fold in range(3):
        vs30("train", "--config", "run.cfg", "--fold", fold,
             "--out", f"run{fold}")
        vs30("evaluate", "--checkpoint", f"run{fold}/checkpoint.ckpt",
             "--manifest", "corpus", "--fold", fold, "--out", f"eval{fold}")
    vs30("report", "--runs", "eval0", "eval1", "eval2", "--out", "merged")


def test_cli_determinism(tmp_path):
    with criterion("determinism: two identical end-to-end runs produce "
                   "byte-identical reports", 900):
        _end_to_end(tmp_path / "a")
        _end_to_end(tmp_path / "b")
        compared = 0
        for path in sorted((tmp_path / "a").rglob("*")):
            if not path.is_file() or path.name == "run.log":
                continue
            twin = tmp_path / "b" / path.relative_to(tmp_path / "a")
            assert path.read_bytes() == twin.read_bytes(), path
            compared += 1
        assert compared > 40  # corpus + runs + reports all lined up
