"""`vs30`: the pipeline as subcommands, from corpus synthesis to reports.

Every command validates its inputs, writes only under --out, and exits
nonzero with a one-line diagnostic on stderr when something is wrong:
2 for usage problems, 3 for data problems, 4 for numeric failures.
Outputs are byte-identical across reruns with identical inputs; wall
clock timestamps go only to run.log.

The environment variable VS30_THREADS (default 1) caps the BLAS thread
pools before numpy loads, so one invocation uses a predictable slice of
the machine and fold runs can be parallelized at the process level.
"""

from __future__ import annotations

import argparse
import datetime
import os
import sys
from pathlib import Path

from .errors import ConfigError, DataError, NumericError

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")


def _init_threads():
    raw = os.environ.get("VS30_THREADS", "1")
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        print(f"vs30: VS30_THREADS must be a positive integer, got {raw!r}",
              file=sys.stderr)
        raise SystemExit(EXIT_USAGE)
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


class _Parser(argparse.ArgumentParser):
    """argparse with a one-line error message instead of usage + message."""

    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


class _RunLog:
    """Append-only log; the only place timestamps are allowed."""

    def __init__(self, path: Path):
        self.path = path
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def line(self, message: str):
        stamp = datetime.datetime.now().isoformat(timespec="seconds")
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(f"{stamp} {message}\n")


def _dataset_dir(path) -> Path:
    """Accept a dataset directory or a path to its manifest.csv."""
    p = Path(path)
    return p.parent if p.is_file() else p


def _fold_plan(rc, manifest):
    from . import datapipe
    if rc.folds_file is not None:
        return datapipe.read_fold_plan(rc.folds_file)
    return datapipe.plan_folds(manifest.labeled_stations(),
                               n_folds=rc.folds_count, seed=rc.folds_seed)


# ----------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    from . import datapipe
    out = Path(args.out)
    man = datapipe.synth_corpus(out, args.stations, args.events,
                                seed=args.seed, class_skew=args.class_skew)
    print(f"wrote {len(man.stations)} stations, {len(man.events)} events, "
          f"{len(man.rows)} records to {out}")
    return 0


def cmd_split(args) -> int:
    from . import datapipe
    man = datapipe.read_manifest(_dataset_dir(args.manifest))
    plan = datapipe.plan_folds(man.labeled_stations(), n_folds=args.folds,
                               seed=args.seed)
    datapipe.write_fold_plan(plan, args.out)
    print(f"assigned {len(plan.assignment)} stations to {plan.n_folds} "
          f"folds in {args.out}")
    return 0


def _final_losses(trace):
    last = {}
    for _epoch, split, loss, _lr in trace:
        last[split] = loss
    return last


def _run_training(args, phase: str) -> int:
    from . import datapipe, runconfig, trainer
    rc = runconfig.load_run_config(args.config, args.set, phase=phase)
    if rc.manifest is None:
        raise ConfigError("config needs: manifest = <dataset directory>")
    man = datapipe.read_manifest(_dataset_dir(rc.manifest))
    out = Path(args.out)
    runconfig.write_resolved(rc, out)
    log = _RunLog(out / "run.log")
    fold = getattr(args, "fold", -1)
    log.line(f"{phase} start: config={args.config} fold={fold} "
             f"config_hash={runconfig.config_digest(rc)}")

    if phase == "single":
        plan = _fold_plan(rc, man)
        res = trainer.train_single_phase(man, plan, args.fold, rc.spec,
                                         rc.train)
    elif phase == "pretrain":
        res = trainer.pretrain_epicenter(man, rc.spec, rc.train)
    else:
        if rc.pretrained is None:
            raise ConfigError("config needs: pretrained = <checkpoint path>")
        pre = trainer.load_checkpoint(rc.pretrained, for_transfer=True)
        plan = _fold_plan(rc, man)
        res = trainer.train_two_phase(pre, man, plan, args.fold, rc.spec,
                                      rc.train)

    trainer.save_checkpoint(res.checkpoint, out / "checkpoint.ckpt")
    trainer.write_trace(res.trace, out / "trace.csv")
    if res.transfer is not None:
        lines = [f"copied {n}" for n in res.transfer["copied"]]
        lines += [f"reinitialized {n}" for n in res.transfer["reinitialized"]]
        (out / "transfer_manifest.txt").write_text("\n".join(lines) + "\n",
                                                   encoding="utf-8")
    last = _final_losses(res.trace)
    summary = (f"{phase} done: kept epoch {res.checkpoint.epoch}, "
               + ", ".join(f"final {k} loss {v:.6f}" for k, v in
                           sorted(last.items())))
    log.line(summary)
    print(summary)
    print(f"checkpoint: {out / 'checkpoint.ckpt'}")
    return 0


def cmd_train(args) -> int:
    return _run_training(args, "single")


def cmd_pretrain(args) -> int:
    return _run_training(args, "pretrain")


def cmd_transfer_train(args) -> int:
    return _run_training(args, "finetune")


def cmd_evaluate(args) -> int:
    from . import datapipe, evalreport, runconfig, trainer
    ckpt = trainer.load_checkpoint(args.checkpoint)
    if ckpt.spec.output_dim != 1:
        raise DataError(f"{args.checkpoint} does not predict vs30 "
                        f"(output_dim {ckpt.spec.output_dim})")
    if ckpt.fold_plan is None:
        raise DataError(f"{args.checkpoint} holds no fold plan; was it "
                        f"trained on the whole corpus?")
    if args.fold != ckpt.fold:
        raise DataError(f"checkpoint held out fold {ckpt.fold}, "
                        f"not fold {args.fold}")
    man = datapipe.read_manifest(_dataset_dir(args.manifest))
    _, test_rows = datapipe.split_records(man, ckpt.fold_plan, args.fold)
    if not test_rows:
        raise DataError(f"fold {args.fold} has no test records in "
                        f"{args.manifest}")
    out = Path(args.out)
    rc = runconfig.RunConfig(spec=ckpt.spec, train=ckpt.config,
                             folds_count=ckpt.fold_plan.n_folds,
                             folds_seed=ckpt.fold_plan.seed)
    runconfig.write_resolved(rc, out)
    log = _RunLog(out / "run.log")
    log.line(f"evaluate start: checkpoint={args.checkpoint} fold={args.fold}")
    report = evalreport.evaluate(ckpt, man, test_rows)
    evalreport.export_report(report, out)
    for sid, reason in report.skipped_stations:
        print(f"skipped {sid}: {reason}")
    summary = (f"fold {args.fold}: {report.n_stations} stations, overall "
               f"absolute mean error {report.overall_abs_mean_error:.6f}%")
    log.line(summary)
    print(summary)
    return 0


def cmd_predict(args) -> int:
    from . import datapipe, sigprep, trainer
    ckpt = trainer.load_checkpoint(args.checkpoint)
    rate, channels = datapipe.read_sm3c(args.record)
    record = sigprep.WaveformRecord(
        record_id=Path(args.record).name, station_id="", event_id="",
        sample_rate_hz=rate, channels=channels)
    value = trainer.predict_record(ckpt, record, args.lat, args.lon)
    print(f"{value:.6f}")
    return 0


def cmd_report(args) -> int:
    from . import evalreport
    station_lists = []
    for run in args.runs:
        station_lists.append(
            evalreport.read_station_errors(Path(run) / "station_errors.csv"))
    merged = evalreport.merge_station_errors(station_lists)
    if args.out is not None:
        evalreport.export_report(merged, args.out)
    print(f"{'Site Class':<12}{'No. of Stations':>16}  "
          f"{'Absolute Mean Error %':>22}")
    for cls, count, err in merged.class_rows:
        print(f"{cls:<12}{count:>16}  {err:>22.6f}")
    print(f"{'Overall':<12}{merged.n_stations:>16}  "
          f"{merged.overall_abs_mean_error:>22.6f}")
    return 0


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vs30",
                     description="Vs30 prediction pipeline on synthetic "
                                 "strong-motion corpora.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic corpus",
                       description="Generate stations, events, and waveform "
                                   "records with known vs30 labels.")
    p.add_argument("--stations", type=_positive_int, required=True,
                   help="number of stations (positive)")
    p.add_argument("--events", type=_positive_int, required=True,
                   help="number of events (positive)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=_nonneg_int, default=0,
                   help="corpus seed (default 0)")
    p.add_argument("--class-skew", action="store_true",
                   help="bias station labels toward soft-soil classes")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="plan station-disjoint folds",
                       description="Assign labeled stations to "
                                   "class-stratified cross-validation folds.")
    p.add_argument("--manifest", required=True,
                   help="dataset directory (or its manifest.csv)")
    p.add_argument("--folds", type=_positive_int, default=5,
                   help="number of folds (default 5)")
    p.add_argument("--seed", type=_nonneg_int, default=0,
                   help="shuffle seed (default 0)")
    p.add_argument("--out", required=True, help="fold plan file to write")
    p.set_defaults(func=cmd_split)

    for name, func, blurb in (
            ("train", cmd_train,
             "single-phase training on one fold's training stations"),
            ("pretrain", cmd_pretrain,
             "epicenter pretraining on the whole corpus"),
            ("transfer-train", cmd_transfer_train,
             "fine-tune a pretrained encoder on one fold")):
        p = sub.add_parser(name, help=blurb, description=blurb + ".")
        p.add_argument("--config", required=True, help="run config file")
        if name != "pretrain":
            p.add_argument("--fold", type=_nonneg_int, required=True,
                           help="fold index to hold out")
        p.add_argument("--out", required=True, help="run output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                       help="override one config entry (repeatable)")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="score a checkpoint on its test fold",
                       description="Predict vs30 on the held-out stations "
                                   "and write the error report.")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--manifest", required=True,
                   help="dataset directory (or its manifest.csv)")
    p.add_argument("--fold", type=_nonneg_int, required=True,
                   help="fold index (must match the checkpoint)")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="predict vs30 for one record",
                       description="Print the predicted vs30 (m/s) for one "
                                   "waveform file and station coordinates.")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--record", required=True, help="waveform file (SM3C)")
    p.add_argument("--lat", type=float, required=True, help="station latitude")
    p.add_argument("--lon", type=float, required=True,
                   help="station longitude")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="merge fold reports",
                       description="Pool per-fold station errors into one "
                                   "cross-validation class summary.")
    p.add_argument("--runs", nargs="+", required=True, metavar="DIR",
                   help="evaluation output directories")
    p.add_argument("--out", default=None,
                   help="optional directory for the merged report files")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    _init_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"vs30 {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"vs30 {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"vs30 {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
