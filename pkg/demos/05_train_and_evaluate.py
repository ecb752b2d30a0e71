#!/usr/bin/env python3
"""Train one fold and read the evaluation report.

End-to-end pass through the library API: synthetic corpus, fold plan,
a short single-phase training run, then percentage-error evaluation on
the held-out stations next to the mean-predictor baseline. The `vs30`
command line wraps exactly these calls.
"""

import argparse
import tempfile

from vs30net import datapipe, evalreport, trainer
from vs30net.encoders import ModelSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=None,
                    help="where to export the report files "
                         "(default: temp dir, printed)")
    ap.add_argument("--epochs", type=int, default=4)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as scratch:
        man = datapipe.synth_corpus(scratch, 40, 6, seed=5)
        plan = datapipe.plan_folds(man.labeled_stations(), n_folds=5, seed=0)
        spec = ModelSpec(encoder_kind="resnet", domain="frequency",
                         duration_s=15)
        cfg = trainer.TrainConfig(phase="single", target="vs30",
                                  epochs=args.epochs, batch_size=32,
                                  base_lr=1e-3, dropout_rate=0.1,
                                  val_fraction=0.1, seed=0)

        res = trainer.train_single_phase(man, plan, 0, spec, cfg)
        print(f"kept epoch {res.checkpoint.epoch} "
              f"(validation stations: {', '.join(res.val_stations)})")
        print("\nepoch  split  loss")
        for epoch, split, loss, lr in res.trace:
            print(f"{epoch:5d}  {split:5s}  {loss:10.4f}   lr {lr:g}")

        train_rows, test_rows = datapipe.split_records(man, plan, 0)
        rep = evalreport.evaluate(res.checkpoint, man, test_rows)

        labels = [man.stations[r.station_id].vs30_mps for r in train_rows]
        base = evalreport.evaluate_predictor(
            evalreport.baseline_mean_predictor(labels), man, test_rows,
            spec.duration_s)

        print(f"\nfold 0, {rep.n_stations} test stations")
        print("class  n   abs mean error %")
        for cls, n, err in rep.class_rows:
            print(f"  {cls}   {n:2d}   {err:8.2f}")
        print(f"model    overall {rep.overall_abs_mean_error:6.2f}% "
              f"(std of signed errors {rep.std_pct:.2f})")
        print(f"baseline overall {base.overall_abs_mean_error:6.2f}% "
              f"(always predicts the training mean)")

        out = args.out or tempfile.mkdtemp(prefix="vs30_report_")
        paths = evalreport.export_report(rep, out)
        print(f"\nreport files in {out}:")
        for name, path in sorted(paths.items()):
            print(f"  {name}: {path.name}")


if __name__ == "__main__":
    main()
