"""Percentage-error evaluation and report files.

Aggregation order, fixed here because it changes the numbers: signed
percentage errors are averaged per station first, the absolute value is
taken second, and class / overall means run over stations third. Sums
use math.fsum, so every aggregate is invariant to record and station
order. Exported values are rounded to six decimals at construction and
all later aggregation works from the rounded values, which makes the
CSV files re-parse to the in-memory numbers exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datapipe, sigprep, trainer
from .errors import DataError, FormatError

DECIMALS = 6
HIST_BIN_PCT = 5.0
HIST_RANGE = (-100.0, 100.0)

CLASS_SUMMARY_HEADER = ("Site Class", "No. of Stations",
                        "Absolute Mean Error %")
STATION_ERRORS_HEADER = ("station_id", "lat", "lon", "true_vs30",
                         "site_class", "n_records", "mean_pct_error",
                         "abs_mean_pct_error")
HISTOGRAM_HEADER = ("bin_lo", "bin_hi", "count")


def classify_site(vs30_mps: float) -> str:
    """NEHRP letter for a vs30 value; boundaries go to the lower class."""
    if vs30_mps is None:
        raise DataError("classify_site needs a vs30 value")
    cls = datapipe.site_class(vs30_mps)
    return cls


def _round(v: float) -> float:
    return round(float(v), DECIMALS)


@dataclass
class StationError:
    """One station's pooled test error.

    mean_pct_error is the signed mean over the station's test records of
    100*(pred - true)/true; abs_mean_pct_error is its absolute value.
    All float fields are rounded to six decimals on construction.
    """

    station_id: str
    lat: float
    lon: float
    true_vs30: float
    n_records: int
    mean_pct_error: float
    abs_mean_pct_error: float

    def __post_init__(self):
        if self.n_records < 1:
            raise DataError(f"station {self.station_id!r}: n_records must be "
                            f">= 1, got {self.n_records}")
        if not self.true_vs30 > 0:
            raise DataError(f"station {self.station_id!r}: true_vs30 must be "
                            f"positive, got {self.true_vs30}")

    @property
    def site_class(self) -> str:
        return classify_site(self.true_vs30)


def station_error(station_id: str, lat: float, lon: float, true_vs30: float,
                  preds) -> StationError:
    preds = list(preds)
    if not preds:
        raise DataError(f"station {station_id!r} has no predictions")
    if not true_vs30 > 0:
        raise DataError(f"station {station_id!r}: true_vs30 must be positive")
    signed = _round(math.fsum(100.0 * (float(p) - true_vs30) / true_vs30
                              for p in preds) / len(preds))
    return StationError(station_id=station_id, lat=_round(lat),
                        lon=_round(lon), true_vs30=_round(true_vs30),
                        n_records=len(preds), mean_pct_error=signed,
                        abs_mean_pct_error=abs(signed))


@dataclass
class EvalReport:
    """Per-station errors plus the class, overall, and histogram views."""

    stations: list  # StationError, sorted by station_id
    class_rows: list  # (site_class, n_stations, class_abs_mean_error)
    overall_abs_mean_error: float
    std_pct: float  # population std of the signed per-station means
    histogram: list  # (bin_lo, bin_hi, count); first/last are overflow
    skipped_stations: list  # (station_id, reason)

    @property
    def n_stations(self) -> int:
        return len(self.stations)


def _histogram(signed_values) -> list:
    lo, hi = HIST_RANGE
    edges = np.linspace(lo, hi, int((hi - lo) / HIST_BIN_PCT) + 1)
    v = np.asarray(signed_values, dtype=np.float64)
    core, _ = np.histogram(v[(v >= lo) & (v <= hi)], bins=edges)
    rows = [(float("-inf"), lo, int((v < lo).sum()))]
    rows += [(float(edges[i]), float(edges[i + 1]), int(core[i]))
             for i in range(len(core))]
    rows.append((hi, float("inf"), int((v > hi).sum())))
    return rows


def class_summary_rows(stations) -> tuple:
    """((site_class, n, abs_mean_error) per class present, overall)."""
    by_class = {}
    for s in stations:
        by_class.setdefault(s.site_class, []).append(s.abs_mean_pct_error)
    rows = [(c, len(vals), _round(math.fsum(vals) / len(vals)))
            for c, vals in sorted(by_class.items())]
    overall = _round(math.fsum(s.abs_mean_pct_error for s in stations)
                     / len(stations))
    return rows, overall


def report_from_stations(stations, skipped=()) -> EvalReport:
    """Aggregate StationError values; input order never matters."""
    if not stations:
        raise DataError("cannot build a report from zero stations")
    stations = sorted(stations, key=lambda s: s.station_id)
    for a, b in zip(stations, stations[1:]):
        if a.station_id == b.station_id:
            raise DataError(f"duplicate station {a.station_id!r} in report")
    class_rows, overall = class_summary_rows(stations)
    signed = [s.mean_pct_error for s in stations]
    mean = math.fsum(signed) / len(signed)
    std = _round(math.sqrt(math.fsum((v - mean) ** 2 for v in signed)
                           / len(signed)))
    return EvalReport(stations=stations, class_rows=class_rows,
                      overall_abs_mean_error=overall, std_pct=std,
                      histogram=_histogram(signed),
                      skipped_stations=sorted(skipped))


def _windows_by_station(manifest, rows, duration_s):
    """{station_id: [WindowedSample]}, plus skip reasons per empty station."""
    grouped, reasons = {}, {}
    for row in rows:
        st = manifest.stations[row.station_id]
        if st.vs30_mps is None:
            raise DataError(f"test station {st.station_id!r} has no vs30 label")
        rec = sigprep.normalize_rate(manifest.load_record(row))
        w = sigprep.crop_around_pga(rec, duration_s, label_vs30=st.vs30_mps,
                                    station_lat=st.lat, station_lon=st.lon)
        if isinstance(w, sigprep.Rejected):
            reasons.setdefault(row.station_id, w.reason)
            grouped.setdefault(row.station_id, [])
        else:
            grouped.setdefault(row.station_id, []).append(w)
    skipped = [(sid, reasons[sid]) for sid, ws in grouped.items() if not ws]
    grouped = {sid: ws for sid, ws in grouped.items() if ws}
    return grouped, skipped


def evaluate_predictor(predict_fn, manifest, rows, duration_s) -> EvalReport:
    """Evaluate any samples->vs30 function on test rows.

    Stations whose every window is rejected are excluded and appear in
    the report's skipped-stations section.
    """
    grouped, skipped = _windows_by_station(manifest, rows, duration_s)
    if not grouped:
        raise DataError("no test station kept any usable window")
    stations = []
    for sid in sorted(grouped):
        st = manifest.stations[sid]
        preds = np.asarray(predict_fn(grouped[sid]), dtype=np.float64).reshape(-1)
        stations.append(station_error(sid, st.lat, st.lon, st.vs30_mps, preds))
    return report_from_stations(stations, skipped)


def evaluate(ckpt: trainer.Checkpoint, manifest, rows,
             model=None) -> EvalReport:
    """EvalReport for a checkpoint on one fold's test rows (eval mode)."""
    if model is None:
        model = trainer.model_from_checkpoint(ckpt)

    def predict(samples):
        return trainer.predict_samples(ckpt, samples, model=model)[:, 0]

    return evaluate_predictor(predict, manifest, rows, ckpt.spec.duration_s)


@dataclass
class MeanPredictor:
    """Predicts the training-set mean vs30 for every input."""

    value: float

    def __call__(self, samples) -> np.ndarray:
        return np.full(len(samples), self.value, dtype=np.float64)


def baseline_mean_predictor(train_labels) -> MeanPredictor:
    labels = [float(v) for v in train_labels]
    if not labels:
        raise DataError("baseline needs at least one training label")
    return MeanPredictor(value=math.fsum(labels) / len(labels))


# ------------------------------------------------------------------- exports

def _fmt(v: float) -> str:
    return f"{v:.6f}"


def export_report(report: EvalReport, out_dir) -> dict:
    """Write class_summary.csv, station_errors.csv, histogram.csv, and
    error_map.geojson under out_dir; returns {name: path}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    p = out / "class_summary.csv"
    with open(p, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CLASS_SUMMARY_HEADER)
        for cls, n, err in report.class_rows:
            w.writerow([cls, n, _fmt(err)])
        w.writerow(["Overall", report.n_stations,
                    _fmt(report.overall_abs_mean_error)])
    paths["class_summary"] = p

    p = out / "station_errors.csv"
    with open(p, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(STATION_ERRORS_HEADER)
        for s in report.stations:
            w.writerow([s.station_id, _fmt(s.lat), _fmt(s.lon),
                        _fmt(s.true_vs30), s.site_class, s.n_records,
                        _fmt(s.mean_pct_error), _fmt(s.abs_mean_pct_error)])
    paths["station_errors"] = p

    p = out / "histogram.csv"
    with open(p, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HISTOGRAM_HEADER)
        for lo, hi, count in report.histogram:
            w.writerow([_fmt(lo), _fmt(hi), count])
    paths["histogram"] = p

    p = out / "error_map.geojson"
    features = [{
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [s.lon, s.lat]},
        "properties": {"station_id": s.station_id,
                       "abs_mean_pct_error": s.abs_mean_pct_error,
                       "site_class": s.site_class},
    } for s in report.stations]
    with open(p, "w", encoding="utf-8", newline="") as f:
        json.dump({"type": "FeatureCollection", "features": features}, f,
                  sort_keys=True)
        f.write("\n")
    paths["error_map"] = p
    return paths


def read_station_errors(path) -> list:
    with open(path, encoding="utf-8", newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != list(STATION_ERRORS_HEADER):
            raise FormatError(f"unexpected station_errors header {header}")
        out = []
        for row in r:
            sid, lat, lon, true, _cls, n, signed, abserr = row
            out.append(StationError(
                station_id=sid, lat=float(lat), lon=float(lon),
                true_vs30=float(true), n_records=int(n),
                mean_pct_error=float(signed),
                abs_mean_pct_error=float(abserr)))
    return out


def read_class_summary(path) -> list:
    """Rows as (label, n_stations, abs_mean_error); the last is Overall."""
    with open(path, encoding="utf-8", newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != list(CLASS_SUMMARY_HEADER):
            raise FormatError(f"unexpected class_summary header {header}")
        return [(cls, int(n), float(err)) for cls, n, err in r]


def merge_station_errors(station_lists) -> EvalReport:
    """Cross-validation summary: pool per-fold stations into one report."""
    merged = [s for stations in station_lists for s in stations]
    return report_from_stations(merged)
