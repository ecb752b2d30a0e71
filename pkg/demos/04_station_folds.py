#!/usr/bin/env python3
"""Station-disjoint cross-validation folds.

Records from one station must never appear on both sides of a split:
the network would otherwise memorize station identity instead of
learning anything about the site. Folds are assigned per station,
stratified by site class, and every record follows its station.

Usage: python3 demos/04_station_folds.py [dataset_dir]
With no argument a throwaway corpus is generated in a temp directory.
"""

import sys
import tempfile
from collections import Counter

from vs30net import datapipe

if len(sys.argv) > 1:
    man = datapipe.read_manifest(sys.argv[1])
    tmp = None
else:
    tmp = tempfile.TemporaryDirectory()
    man = datapipe.synth_corpus(tmp.name, 30, 5, seed=2)

plan = datapipe.plan_folds(man.labeled_stations(), n_folds=5, seed=0)
print(f"{len(plan.assignment)} labeled stations into {plan.n_folds} folds "
      f"(seed {plan.seed})\n")

print("fold  stations  A  B  C  D  E  test records  train records")
for fold in range(plan.n_folds):
    test_ids = plan.test_stations(fold)
    by_class = Counter(man.stations[sid].site_class for sid in test_ids)
    train_rows, test_rows = datapipe.split_records(man, plan, fold)
    print(f"  {fold}   {len(test_ids):5d}    "
          + "  ".join(str(by_class[c]) for c in "ABCDE")
          + f"  {len(test_rows):8d}  {len(train_rows):13d}")

# prove disjointness on the record level
for fold in range(plan.n_folds):
    train_rows, test_rows = datapipe.split_records(man, plan, fold)
    overlap = {r.station_id for r in train_rows} & \
        {r.station_id for r in test_rows}
    assert not overlap, overlap
print("\nno station appears on both sides of any split")

# the plan serializes to a small csv so every later command sees the
# exact same assignment
with tempfile.TemporaryDirectory() as d:
    path = f"{d}/folds.csv"
    datapipe.write_fold_plan(plan, path)
    again = datapipe.read_fold_plan(path)
    assert again == plan
    with open(path) as fh:
        head = [next(fh).rstrip() for _ in range(3)]
print("folds.csv round-trips; first lines:")
for line in head:
    print(f"  {line}")

if tmp is not None:
    tmp.cleanup()
