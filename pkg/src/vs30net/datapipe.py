"""Dataset plumbing: manifests, waveform files, folds, synthetic corpus.

A dataset on disk is a directory holding three CSV tables plus one
binary waveform file per record:

  manifest.csv   record_id,waveform_path,station_id,event_id
  stations.csv   station_id,lat,lon,vs30_mps      (empty vs30 = unlabeled)
  events.csv     event_id,origin_lat,origin_lon,magnitude,origin_time_iso8601
  waves/*.sm3c   little-endian container, see read_sm3c/write_sm3c

The synthetic generator stands in for a real strong-motion catalog: a
single-degree-of-freedom site resonance at f0 = vs30/120 Hz shapes
white noise, a gamma-shaped strong-motion envelope places the peak
after a distance-dependent arrival delay, and amplitude follows
10^(0.5 M) / (distance + 10) with (760/vs30)^0.5 site amplification.
The physics is deliberately minimal; the point is a label-correlated,
learnable task with exact determinism per (seed, station, event).
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, BadVersionError, ConfigError, DataError,
                     FormatError, TruncatedError)
from .sigprep import TARGET_RATE_HZ, WaveformRecord

SITE_CLASSES = ("A", "B", "C", "D", "E")
SM3C_MAGIC = b"SM3C"
SM3C_VERSION = 1

# peak-to-edge margin (s) that keeps the longest supported crop (60 s,
# needing 30 s per side) inside every auto-sized synthetic record
_EDGE_MARGIN_S = 33.0
_PRE_EVENT_S = 29.0  # quiet lead-in before the wave arrival
_PEAK_AFTER_ARRIVAL_S = 3.0
_SHEAR_SPEED_KM_S = 3.5
_DAMPING = 0.22
_NOISE_FLOOR = 1e-3


def site_class(vs30_mps: float | None) -> str | None:
    """NEHRP-style class from Vs30; boundaries 1500/760/360/180 m/s."""
    if vs30_mps is None:
        return None
    if not vs30_mps > 0:
        raise DataError(f"vs30 must be positive, got {vs30_mps}")
    if vs30_mps > 1500:
        return "A"
    if vs30_mps > 760:
        return "B"
    if vs30_mps > 360:
        return "C"
    if vs30_mps > 180:
        return "D"
    return "E"


@dataclass
class StationMeta:
    station_id: str
    lat: float
    lon: float
    vs30_mps: float | None = None

    def __post_init__(self):
        if self.vs30_mps is not None and not self.vs30_mps > 0:
            raise DataError(
                f"station {self.station_id!r}: vs30 must be positive, "
                f"got {self.vs30_mps}")

    @property
    def site_class(self) -> str | None:
        return site_class(self.vs30_mps)


@dataclass
class EventMeta:
    event_id: str
    origin_lat: float
    origin_lon: float
    magnitude: float
    origin_time: str = ""

    def __post_init__(self):
        if not 0.0 <= self.magnitude <= 10.0:
            raise DataError(
                f"event {self.event_id!r}: magnitude {self.magnitude} outside [0, 10]")


@dataclass
class ManifestRow:
    record_id: str
    waveform_path: str
    station_id: str
    event_id: str


@dataclass
class DatasetManifest:
    rows: list
    stations: dict  # station_id -> StationMeta
    events: dict  # event_id -> EventMeta
    base_dir: str = "."

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            if row.record_id in seen:
                raise DataError(f"duplicate record_id {row.record_id!r}")
            seen.add(row.record_id)
            if row.station_id not in self.stations:
                raise DataError(
                    f"record {row.record_id!r} references unknown station "
                    f"{row.station_id!r}")
            if row.event_id not in self.events:
                raise DataError(
                    f"record {row.record_id!r} references unknown event "
                    f"{row.event_id!r}")

    def labeled_stations(self) -> list:
        return [s for s in self.stations.values() if s.vs30_mps is not None]

    def load_record(self, row: ManifestRow) -> WaveformRecord:
        rate, channels = read_sm3c(Path(self.base_dir) / row.waveform_path)
        return WaveformRecord(record_id=row.record_id, station_id=row.station_id,
                              event_id=row.event_id, sample_rate_hz=rate,
                              channels=channels)


@dataclass
class FoldPlan:
    n_folds: int
    assignment: dict  # station_id -> fold index
    seed: int

    def test_stations(self, fold: int) -> set:
        self._check(fold)
        return {s for s, f in self.assignment.items() if f == fold}

    def train_stations(self, fold: int) -> set:
        self._check(fold)
        return {s for s, f in self.assignment.items() if f != fold}

    def _check(self, fold: int):
        if not 0 <= fold < self.n_folds:
            raise ConfigError(f"fold {fold} outside 0..{self.n_folds - 1}")

    def to_dict(self) -> dict:
        return {"n_folds": self.n_folds, "seed": self.seed,
                "assignment": dict(sorted(self.assignment.items()))}

    @classmethod
    def from_dict(cls, d: dict) -> "FoldPlan":
        return cls(n_folds=int(d["n_folds"]), assignment=dict(d["assignment"]),
                   seed=int(d["seed"]))


def plan_folds(stations, n_folds: int = 5, seed: int = 0) -> FoldPlan:
    """Station-disjoint fold assignment, stratified by site class.

    Within each class (fixed A..E order) stations are shuffled by seed,
    then dealt round-robin with a counter that rolls across classes, so
    fold sizes stay balanced even when classes are tiny.
    """
    labeled = [s for s in stations if s.vs30_mps is not None]
    if len(labeled) < n_folds:
        raise DataError(
            f"need at least {n_folds} labeled stations, got {len(labeled)}")
    rng = np.random.default_rng(seed)
    assignment = {}
    counter = 0
    for cls in SITE_CLASSES:
        ids = sorted(s.station_id for s in labeled if s.site_class == cls)
        for sid in (ids[i] for i in rng.permutation(len(ids))):
            assignment[sid] = counter % n_folds
            counter += 1
    return FoldPlan(n_folds=n_folds, assignment=assignment, seed=seed)


def split_records(manifest: DatasetManifest, plan: FoldPlan, fold: int):
    """(train rows, test rows) for one fold; unlabeled stations in neither."""
    test = plan.test_stations(fold)
    train = plan.train_stations(fold)
    train_rows = [r for r in manifest.rows if r.station_id in train]
    test_rows = [r for r in manifest.rows if r.station_id in test]
    return train_rows, test_rows


def write_fold_plan(plan: FoldPlan, path):
    """Save a plan as folds.csv: one metadata comment, then station rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# fold plan: n_folds={plan.n_folds} seed={plan.seed}\n")
        w = csv.writer(fh)
        w.writerow(["station_id", "fold"])
        for sid in sorted(plan.assignment):
            w.writerow([sid, plan.assignment[sid]])


def read_fold_plan(path) -> FoldPlan:
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            meta = fh.readline()
            m = re.match(r"# fold plan: n_folds=(\d+) seed=(\d+)\s*$", meta)
            if m is None:
                raise FormatError(f"{path}: missing fold plan metadata line")
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["station_id", "fold"]:
                raise FormatError(f"{path}: header {header} != "
                                  f"['station_id', 'fold']")
            assignment = {}
            for row in reader:
                if len(row) != 2:
                    raise FormatError(f"{path}: malformed row {row}")
                if row[0] in assignment:
                    raise FormatError(f"{path}: duplicate station {row[0]}")
                assignment[row[0]] = int(row[1])
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    n_folds = int(m.group(1))
    if any(not 0 <= f < n_folds for f in assignment.values()):
        raise FormatError(f"{path}: fold index outside 0..{n_folds - 1}")
    return FoldPlan(n_folds=n_folds, assignment=assignment,
                    seed=int(m.group(2)))


def haversine_km(lat1, lon1, lat2, lon2) -> float:
    """Great-circle distance, spherical earth of radius 6371 km."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * 6371.0 * math.asin(min(1.0, math.sqrt(a)))


# ------------------------------------------------------------ synthesis

def _record_rng(seed: int, station_id: str, event_id: str) -> np.random.Generator:
    # stable across processes and runs, unlike hash()
    digest = hashlib.sha256(f"{seed}|{station_id}|{event_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def synth_record(station: StationMeta, event: EventMeta,
                 duration_s: float | None = None, seed: int = 0) -> WaveformRecord:
    """One synthetic 3-channel record at 100 Hz.

    duration_s = None sizes the record so the peak keeps a 33 s margin
    to both edges (60 s crops always accept). The rng depends only on
    (seed, station_id, event_id): changing magnitude rescales the same
    noise, so PGA ratios follow 10^(0.5 dM) exactly.
    """
    if station.vs30_mps is None:
        raise DataError(f"station {station.station_id!r} has no vs30; cannot "
                        f"synthesize a site response")
    dist = haversine_km(station.lat, station.lon, event.origin_lat, event.origin_lon)
    t_arrival = _PRE_EVENT_S + dist / _SHEAR_SPEED_KM_S
    t_peak = t_arrival + _PEAK_AFTER_ARRIVAL_S
    if duration_s is None:
        duration_s = math.ceil(t_peak + _EDGE_MARGIN_S)
    n = int(round(duration_s * TARGET_RATE_HZ))
    if n < 2:
        raise ConfigError(f"duration {duration_s}s too short")
    rng = _record_rng(seed, station.station_id, event.event_id)
    noise = rng.standard_normal((3, n))

    # site resonance: SDOF transfer magnitude peaking near f0 = vs30/120
    f0 = station.vs30_mps / 120.0
    freqs = np.fft.rfftfreq(n, d=1.0 / TARGET_RATE_HZ)
    ratio = freqs / f0
    gain = 1.0 / np.sqrt((1.0 - ratio ** 2) ** 2 + (2.0 * _DAMPING * ratio) ** 2)
    shaped = np.fft.irfft(np.fft.rfft(noise, axis=1) * gain, n=n, axis=1)
    shaped /= shaped.std(axis=1, keepdims=True)

    # gamma-shaped strong-motion envelope, unit peak at t_peak
    t = np.arange(n) / TARGET_RATE_HZ
    u = np.maximum(t - t_arrival, 0.0) / _PEAK_AFTER_ARRIVAL_S
    envelope = np.where(u > 0, u ** 2 * np.exp(2.0 * (1.0 - u)), 0.0)

    amplitude = (10.0 ** (0.5 * event.magnitude) / (dist + 10.0)
                 * math.sqrt(760.0 / station.vs30_mps) * 0.01)
    channels = (shaped * (envelope + _NOISE_FLOOR) * amplitude).astype(np.float32)
    return WaveformRecord(
        record_id=f"{event.event_id}_{station.station_id}",
        station_id=station.station_id, event_id=event.event_id,
        sample_rate_hz=TARGET_RATE_HZ, channels=channels)


# class sampling weights for the skewed mode; C/D/B fractions follow the
# observed station-network imbalance, the sliver left goes to A and E
_CLASS_WEIGHTS = {"C": 0.57, "D": 0.305, "B": 0.117, "A": 0.004, "E": 0.004}
_CLASS_RANGES = {"A": (1500.0, 3000.0), "B": (760.0, 1500.0),
                 "C": (360.0, 760.0), "D": (180.0, 360.0), "E": (60.0, 180.0)}


def _sample_vs30(rng, vs30_range, class_skew: bool) -> float:
    lo, hi = vs30_range
    if not class_skew:
        return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    classes, weights = [], []
    for cls, w in _CLASS_WEIGHTS.items():
        clo, chi = _CLASS_RANGES[cls]
        clo, chi = max(clo, lo), min(chi, hi)
        if clo < chi:
            classes.append((clo, chi))
            weights.append(w)
    probs = np.asarray(weights) / sum(weights)
    clo, chi = classes[rng.choice(len(classes), p=probs)]
    return float(np.exp(rng.uniform(np.log(clo), np.log(chi))))


def synth_corpus(out_dir, n_stations: int, n_events: int,
                 vs30_range=(150.0, 1600.0), seed: int = 0,
                 bbox=((38.0, 40.0), (26.0, 30.0)), cutoff_km: float = 100.0,
                 class_skew: bool = False, magnitude_range=(2.2, 6.5),
                 unlabeled_fraction: float = 0.0,
                 write_waveforms: bool = True) -> DatasetManifest:
    """Generate a full synthetic dataset directory and return its manifest.

    bbox is ((lat_min, lat_max), (lon_min, lon_max)). Every
    (station, event) pair within cutoff_km yields one record.
    unlabeled_fraction of stations get an empty vs30 in the tables
    (their waveforms still come from a hidden draw).
    """
    (lat_lo, lat_hi), (lon_lo, lon_hi) = bbox
    if not (lat_hi > lat_lo and lon_hi > lon_lo):
        raise ConfigError(f"degenerate bounding box {bbox}")
    if not (0.0 <= unlabeled_fraction < 1.0):
        raise ConfigError(f"unlabeled_fraction must be in [0,1), got {unlabeled_fraction}")
    if not vs30_range[1] > vs30_range[0] > 0:
        raise ConfigError(f"bad vs30 range {vs30_range}")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)

    hidden_vs30 = {}
    stations = {}
    n_unlabeled = int(round(unlabeled_fraction * n_stations))
    for i in range(n_stations):
        sid = f"ST{i:04d}"
        v = _sample_vs30(rng, vs30_range, class_skew)
        hidden_vs30[sid] = v
        stations[sid] = StationMeta(
            station_id=sid, lat=float(rng.uniform(lat_lo, lat_hi)),
            lon=float(rng.uniform(lon_lo, lon_hi)),
            vs30_mps=None if i < n_unlabeled else v)

    t0 = _dt.datetime(2024, 1, 1, tzinfo=_dt.timezone.utc)
    events = {}
    for j in range(n_events):
        eid = f"EV{j:04d}"
        events[eid] = EventMeta(
            event_id=eid, origin_lat=float(rng.uniform(lat_lo, lat_hi)),
            origin_lon=float(rng.uniform(lon_lo, lon_hi)),
            magnitude=float(rng.uniform(*magnitude_range)),
            origin_time=(t0 + _dt.timedelta(hours=j)).isoformat())

    rows = []
    wave_dir = out_dir / "waves"
    if write_waveforms:
        wave_dir.mkdir(parents=True, exist_ok=True)
    for eid in sorted(events):
        ev = events[eid]
        for sid in sorted(stations):
            st = stations[sid]
            if haversine_km(st.lat, st.lon, ev.origin_lat, ev.origin_lon) > cutoff_km:
                continue
            rid = f"{eid}_{sid}"
            rel = f"waves/{rid}.sm3c"
            if write_waveforms:
                gen_station = StationMeta(sid, st.lat, st.lon, hidden_vs30[sid])
                rec = synth_record(gen_station, ev, seed=seed)
                write_sm3c(out_dir / rel, rec)
            rows.append(ManifestRow(record_id=rid, waveform_path=rel,
                                    station_id=sid, event_id=eid))

    manifest = DatasetManifest(rows=rows, stations=stations, events=events,
                               base_dir=str(out_dir))
    write_manifest(manifest, out_dir)
    return manifest


# ------------------------------------------------------------------- I/O

def write_sm3c(path, rec: WaveformRecord):
    """magic 'SM3C', u16 version, f64 rate, u64 n, 3 x n float32, all LE."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(rec.channels, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(SM3C_MAGIC)
        fh.write(struct.pack("<Hdq", SM3C_VERSION, rec.sample_rate_hz,
                             rec.n_samples))
        fh.write(payload.tobytes())


def read_sm3c(path):
    """-> (sample_rate_hz, channels [3, n]); distinct errors per failure."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read waveform file {path}: {exc}") from exc
    if len(blob) < 4 or blob[:4] != SM3C_MAGIC:
        raise BadMagicError(f"{path}: not an SM3C file "
                            f"(magic {blob[:4]!r})")
    header = struct.calcsize("<Hdq")
    if len(blob) < 4 + header:
        raise TruncatedError(f"{path}: header truncated at {len(blob)} bytes")
    version, rate, n = struct.unpack_from("<Hdq", blob, 4)
    if version != SM3C_VERSION:
        raise BadVersionError(f"{path}: version {version}, expected {SM3C_VERSION}")
    if n <= 0 or rate <= 0:
        raise DataError(f"{path}: invalid header (rate={rate}, n={n})")
    need = 4 + header + 3 * n * 4
    if len(blob) < need:
        raise TruncatedError(f"{path}: payload truncated "
                             f"({len(blob)} of {need} bytes)")
    channels = np.frombuffer(blob, dtype="<f4", count=3 * n,
                             offset=4 + header).reshape(3, n).copy()
    return float(rate), channels


def write_manifest(manifest: DatasetManifest, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["record_id", "waveform_path", "station_id", "event_id"])
        for r in manifest.rows:
            w.writerow([r.record_id, r.waveform_path, r.station_id, r.event_id])
    with open(out_dir / "stations.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["station_id", "lat", "lon", "vs30_mps"])
        for sid in sorted(manifest.stations):
            s = manifest.stations[sid]
            w.writerow([s.station_id, repr(s.lat), repr(s.lon),
                        "" if s.vs30_mps is None else repr(s.vs30_mps)])
    with open(out_dir / "events.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["event_id", "origin_lat", "origin_lon", "magnitude",
                    "origin_time_iso8601"])
        for eid in sorted(manifest.events):
            e = manifest.events[eid]
            w.writerow([e.event_id, repr(e.origin_lat), repr(e.origin_lon),
                        repr(e.magnitude), e.origin_time])


def _read_csv(path, expected_header):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != expected_header:
                raise DataError(f"{path}: header {header} != {expected_header}")
            return list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def read_manifest(dataset_dir) -> DatasetManifest:
    dataset_dir = Path(dataset_dir)
    stations = {}
    for row in _read_csv(dataset_dir / "stations.csv",
                         ["station_id", "lat", "lon", "vs30_mps"]):
        if len(row) != 4:
            raise DataError(f"stations.csv: malformed row {row}")
        stations[row[0]] = StationMeta(
            station_id=row[0], lat=float(row[1]), lon=float(row[2]),
            vs30_mps=float(row[3]) if row[3] != "" else None)
    events = {}
    for row in _read_csv(dataset_dir / "events.csv",
                         ["event_id", "origin_lat", "origin_lon", "magnitude",
                          "origin_time_iso8601"]):
        if len(row) != 5:
            raise DataError(f"events.csv: malformed row {row}")
        events[row[0]] = EventMeta(
            event_id=row[0], origin_lat=float(row[1]), origin_lon=float(row[2]),
            magnitude=float(row[3]), origin_time=row[4])
    rows = []
    for row in _read_csv(dataset_dir / "manifest.csv",
                         ["record_id", "waveform_path", "station_id", "event_id"]):
        if len(row) != 4:
            raise DataError(f"manifest.csv: malformed row {row}")
        rows.append(ManifestRow(*row))
    return DatasetManifest(rows=rows, stations=stations, events=events,
                           base_dir=str(dataset_dir))
