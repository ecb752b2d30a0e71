"""Training loops, checkpoint files, and loss traces.

Three entry points cover the pipeline. ``train_single_phase`` fits one
model on one cross-validation fold. ``pretrain_epicenter`` fits the same
encoder topology to station-to-epicenter offsets, which need no vs30
labels. ``train_two_phase`` copies a pretrained encoder into a fresh
model and fine-tunes everything on the labeled fold.

Every run is fully determined by (seed, config, manifest): shuffling,
validation splits, initialization, and dropout each draw from their own
stream spawned from one SeedSequence. Checkpoints round-trip all tensors
bit-exactly.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import sigprep
from .datapipe import DatasetManifest, FoldPlan, split_records
from .encoders import (CoordinateBox, ModelSpec, Vs30Model, build_model,
                       transfer_encoder)
from .errors import (BadMagicError, BadVersionError, ConfigError, DataError,
                     FormatError, NumericError, TruncatedError)
from .ndnet import (AdamState, Tensor, adam_step, effective_lr, loss, no_grad)

CHECKPOINT_MAGIC = b"VS30CKPT"
CHECKPOINT_VERSION = 1
PHASES = ("single", "pretrain", "finetune")
TARGET_KINDS = ("vs30", "epicenter")
TRACE_HEADER = ("epoch", "split", "loss", "lr")

_PHASE_CODE = {"single": 0, "pretrain": 1, "finetune": 2}


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings. Everything architectural lives in ModelSpec.

    ``dropout_rate`` here overrides the one in the model spec so a single
    knob controls regularization per run. ``val_fraction`` is the share
    of training stations held out (station-disjoint) to pick the best
    checkpoint; 0 disables the inner split and the final epoch wins on
    training loss.
    """

    phase: str = "single"
    target: str = "vs30"
    epochs: int = 100
    batch_size: int = 64
    loss_kind: str = "MSE"
    base_lr: float = 1e-5
    lr_decay: float = 0.9
    decay_epochs: tuple = (5, 10, 20)
    dropout_rate: float = 0.1
    val_fraction: float = 0.1
    seed: int = 0
    freeze_encoder: bool = False
    log_target: bool = False

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.target not in TARGET_KINDS:
            raise ConfigError(
                f"target must be one of {TARGET_KINDS}, got {self.target!r}")
        if (self.phase == "pretrain") != (self.target == "epicenter"):
            raise ConfigError(
                "the pretrain phase and the epicenter target go together; got "
                f"phase {self.phase!r} with target {self.target!r}")
        if not isinstance(self.epochs, int) or self.epochs < 0:
            raise ConfigError(f"epochs must be a non-negative int, got {self.epochs}")
        if not isinstance(self.batch_size, int) or self.batch_size < 2:
            raise ConfigError(
                f"batch_size must be an int >= 2 (batch norm needs at least "
                f"two samples), got {self.batch_size}")
        if self.loss_kind not in ("MSE", "MAE"):
            raise ConfigError(f"loss_kind must be MSE or MAE, got {self.loss_kind!r}")
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        epochs = tuple(int(e) for e in self.decay_epochs)
        if list(epochs) != sorted(set(epochs)) or (epochs and epochs[0] < 1):
            raise ConfigError(
                f"decay_epochs must be strictly increasing positive ints, "
                f"got {self.decay_epochs}")
        object.__setattr__(self, "decay_epochs", epochs)
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(
                f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not 0 <= self.val_fraction <= 0.5:
            raise ConfigError(
                f"val_fraction must be in [0, 0.5], got {self.val_fraction}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative int, got {self.seed}")
        if self.log_target and self.target != "vs30":
            raise ConfigError("log_target only applies to the vs30 target")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["decay_epochs"] = list(self.decay_epochs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def config_hash(spec: ModelSpec, cfg: TrainConfig) -> str:
    """sha256 over the canonical JSON of (model spec, train config)."""
    blob = json.dumps({"spec": spec.to_dict(), "train": cfg.to_dict()},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class TargetStats:
    """Affine map taking regression targets to zero mean, unit variance.

    Fitted on the training fold and persisted in the checkpoint so that
    predictions can be mapped back to label scale. With ``log`` set the
    map operates on ln(target) and decode exponentiates.
    """

    kind: str
    mean: np.ndarray  # [output_dim] float64
    std: np.ndarray  # [output_dim] float64, zeros replaced by 1
    log: bool = False

    @classmethod
    def fit(cls, natural: np.ndarray, kind: str, log: bool) -> "TargetStats":
        work = np.log(natural) if log else natural
        mean = work.mean(axis=0)
        std = work.std(axis=0)
        std = np.where(std > 0.0, std, 1.0)
        return cls(kind=kind, mean=mean, std=std, log=log)

    def encode(self, natural: np.ndarray) -> np.ndarray:
        work = np.log(natural) if self.log else natural
        return ((work - self.mean) / self.std).astype(np.float32)

    def decode(self, standardized: np.ndarray) -> np.ndarray:
        out = standardized.astype(np.float64) * self.std + self.mean
        return np.exp(out) if self.log else out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "log": self.log,
                "mean": [float(v) for v in self.mean],
                "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetStats":
        return cls(kind=d["kind"], log=bool(d["log"]),
                   mean=np.asarray(d["mean"], dtype=np.float64),
                   std=np.asarray(d["std"], dtype=np.float64))


@dataclass
class Dataset:
    """Model-ready arrays for one set of records.

    ``targets`` is standardized (what the network regresses); ``natural``
    keeps label scale (vs30 in m/s, or box-normalized epicenter offsets)
    for loss reporting.
    """

    inputs: np.ndarray  # float32, [N,3,L] time or [N,D,51,3] frequency
    coords: np.ndarray  # float32 [N,2]
    targets: np.ndarray  # float32 [N,output_dim]
    natural: np.ndarray  # float64 [N,output_dim]
    record_ids: list
    station_ids: list

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(inputs=self.inputs[idx], coords=self.coords[idx],
                       targets=self.targets[idx], natural=self.natural[idx],
                       record_ids=[self.record_ids[i] for i in idx],
                       station_ids=[self.station_ids[i] for i in idx])


def _load_windows(manifest: DatasetManifest, rows, duration_s: int, *,
                  require_label: bool):
    """Crop every row's record around its peak; rejects are collected."""
    samples, station_ids, rejected = [], [], []
    for row in rows:
        st = manifest.stations[row.station_id]
        ev = manifest.events[row.event_id]
        if require_label and st.vs30_mps is None:
            raise DataError(
                f"station {st.station_id!r} has no vs30 label; cannot train on "
                f"record {row.record_id!r}")
        rec = sigprep.normalize_rate(manifest.load_record(row))
        w = sigprep.crop_around_pga(
            rec, duration_s, label_vs30=st.vs30_mps,
            station_lat=st.lat, station_lon=st.lon,
            event_lat=ev.origin_lat, event_lon=ev.origin_lon)
        if isinstance(w, sigprep.Rejected):
            rejected.append(w)
        else:
            samples.append(w)
            station_ids.append(row.station_id)
    return samples, station_ids, rejected


def _natural_targets(samples, cfg: TrainConfig, box: CoordinateBox) -> np.ndarray:
    if cfg.target == "vs30":
        return np.array([[s.label_vs30] for s in samples], dtype=np.float64)
    # Epicenter offsets, normalized by the training-station bounding box
    # spans so both components are O(1) regardless of region size.
    lat_span = box.lat_max - box.lat_min
    lon_span = box.lon_max - box.lon_min
    lat_span = lat_span if lat_span > 0 else 1.0
    lon_span = lon_span if lon_span > 0 else 1.0
    out = np.array([[(s.event_lat - s.station_lat) / lat_span,
                     (s.event_lon - s.station_lon) / lon_span]
                    for s in samples], dtype=np.float64)
    if not np.isfinite(out).all():
        bad = [samples[i].record_id
               for i in np.nonzero(~np.isfinite(out).all(axis=1))[0]]
        raise DataError(f"records missing station or event coordinates: {bad}")
    return out


def _coords_of(samples, box: CoordinateBox) -> np.ndarray:
    out = np.empty((len(samples), 2), dtype=np.float32)
    for i, s in enumerate(samples):
        c = box.normalize(s.station_lat, s.station_lon)
        out[i] = (c.lat_norm, c.lon_norm)
    return out


def assemble_dataset(manifest: DatasetManifest, rows, spec: ModelSpec,
                     cfg: TrainConfig, *, channel_stats=None, box=None,
                     target_stats=None):
    """Crop, transform, and standardize one set of manifest rows.

    With ``channel_stats``/``box``/``target_stats`` left as None they are
    fitted from these rows, which is only correct for the training fold;
    pass the training-fold values when assembling validation or test
    data. Returns (Dataset, channel_stats, box, target_stats, rejected).
    """
    samples, station_ids, rejected = _load_windows(
        manifest, rows, spec.duration_s, require_label=cfg.target == "vs30")
    if not samples:
        raise DataError("no usable windows: every record was rejected or absent")
    if box is None:
        sids = sorted({r.station_id for r in rows})
        box = CoordinateBox.from_stations([manifest.stations[s] for s in sids])
    natural = _natural_targets(samples, cfg, box)
    if target_stats is None:
        target_stats = TargetStats.fit(natural, cfg.target, cfg.log_target)
    items = samples if spec.domain == "time" else [sigprep.to_spectral(s)
                                                   for s in samples]
    items, channel_stats = sigprep.standardize(items, channel_stats)
    if spec.domain == "time":
        inputs = np.stack([it.samples for it in items])
    else:
        inputs = np.stack([it.data for it in items])
    ds = Dataset(inputs=inputs, coords=_coords_of(samples, box),
                 targets=target_stats.encode(natural), natural=natural,
                 record_ids=[s.record_id for s in samples],
                 station_ids=station_ids)
    return ds, channel_stats, box, target_stats, rejected


@dataclass
class Checkpoint:
    """Everything needed to resume, transfer, or predict."""

    spec: ModelSpec
    params: dict  # name -> float32 array, model order
    adam: AdamState
    channel_stats: sigprep.ChannelStats
    coord_box: CoordinateBox
    target_stats: TargetStats
    config: TrainConfig
    fold: int  # -1 when trained on the whole corpus (pretraining)
    epoch: int  # the epoch these weights come from (best validation)
    fold_plan: FoldPlan | None = None  # None when no station was held out
    version: int = CHECKPOINT_VERSION

    @property
    def config_hash(self) -> str:
        return config_hash(self.spec, self.config)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: list  # rows (epoch, split, loss, lr); epoch 0 is pre-training
    val_stations: tuple = ()  # training stations held out for model selection
    transfer: dict | None = None  # copied/reinitialized parameter names


def _streams(cfg: TrainConfig, fold: int, phase: str):
    """(init, val-split, shuffle, dropout) generators for one run."""
    root = np.random.SeedSequence([cfg.seed, fold + 1, _PHASE_CODE[phase]])
    return tuple(np.random.default_rng(s) for s in root.spawn(4))


def _spec_with_cfg(spec: ModelSpec, cfg: TrainConfig) -> ModelSpec:
    needed = 1 if cfg.target == "vs30" else 2
    if spec.output_dim != needed:
        raise ConfigError(
            f"target {cfg.target!r} needs output_dim {needed}, "
            f"the model spec has {spec.output_dim}")
    if spec.dropout_rate != cfg.dropout_rate:
        spec = dataclasses.replace(spec, dropout_rate=cfg.dropout_rate)
    return spec


def _freeze_encoder(model: Vs30Model):
    for name in model.encoder_param_names():
        model.param(name).trainable = False


def _split_val_stations(station_ids, fraction: float, rng) -> set:
    if fraction == 0.0:
        return set()
    ids = sorted(station_ids)
    n_val = max(1, int(len(ids) * fraction + 0.5))
    if n_val >= len(ids):
        raise DataError(
            f"validation split of {fraction} would hold out {n_val} of "
            f"{len(ids)} training stations, leaving none to train on")
    perm = rng.permutation(len(ids))
    return {ids[i] for i in perm[:n_val]}


def _copy_adam(a: AdamState) -> AdamState:
    return AdamState(beta1=a.beta1, beta2=a.beta2, epsilon=a.epsilon,
                     base_lr=a.base_lr, decay_factor=a.decay_factor,
                     decay_epochs=a.decay_epochs, step_count=a.step_count,
                     m={k: v.copy() for k, v in a.m.items()},
                     v={k: v.copy() for k, v in a.v.items()})


def _natural_loss(pred_std: np.ndarray, natural: np.ndarray,
                  tstats: TargetStats, kind: str) -> float:
    diff = tstats.decode(pred_std) - natural
    return float(np.mean(diff * diff) if kind == "MSE" else np.mean(np.abs(diff)))


def _dataset_loss(model: Vs30Model, ds: Dataset, cfg: TrainConfig,
                  tstats: TargetStats) -> float:
    """Label-scale loss over a whole dataset, eval mode, no graph."""
    total, count = 0.0, 0
    with no_grad():
        for lo in range(0, ds.n, cfg.batch_size):
            hi = min(lo + cfg.batch_size, ds.n)
            pred = model.forward(ds.inputs[lo:hi], ds.coords[lo:hi], "eval")
            total += _natural_loss(pred.data, ds.natural[lo:hi], tstats,
                                   cfg.loss_kind) * (hi - lo)
            count += hi - lo
    return total / count


@dataclass
class _Best:
    epoch: int
    criterion: float
    params: dict
    adam: AdamState


def _fit(model: Vs30Model, train_ds: Dataset, val_ds, cfg: TrainConfig,
         tstats: TargetStats, shuffle_rng, drop_rng):
    """Epoch loop shared by all phases. Returns (best snapshot, trace)."""
    if train_ds.n < 2:
        raise DataError(f"training set has {train_ds.n} window(s); need >= 2")
    adam = AdamState(base_lr=cfg.base_lr, decay_factor=cfg.lr_decay,
                     decay_epochs=cfg.decay_epochs)
    trace = []

    def epoch_lr(epoch):
        return effective_lr(epoch, cfg.base_lr, cfg.lr_decay, cfg.decay_epochs)

    train0 = _dataset_loss(model, train_ds, cfg, tstats)
    trace.append((0, "train", train0, epoch_lr(0)))
    criterion = train0
    if val_ds is not None:
        val0 = _dataset_loss(model, val_ds, cfg, tstats)
        trace.append((0, "val", val0, epoch_lr(0)))
        criterion = val0
    best = _Best(epoch=0, criterion=criterion,
                 params=model.state_arrays(), adam=_copy_adam(adam))

    for epoch in range(1, cfg.epochs + 1):
        lr = epoch_lr(epoch)
        order = shuffle_rng.permutation(train_ds.n)
        total, count = 0.0, 0
        for bi, lo in enumerate(range(0, train_ds.n, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            if idx.size < 2:
                continue  # a lone trailing sample cannot feed batch norm
            for p in model.params:
                p.tensor.zero_grad()
            pred = model.forward(train_ds.inputs[idx], train_ds.coords[idx],
                                 "train", rng=drop_rng)
            batch_loss = loss(pred, Tensor(train_ds.targets[idx]), cfg.loss_kind)
            value = batch_loss.item()
            if not np.isfinite(value):
                raise NumericError(
                    f"training loss is {value} at epoch {epoch}, batch {bi + 1} "
                    f"(first record {train_ds.record_ids[idx[0]]!r})")
            batch_loss.backward()
            adam_step(model.params, adam, epoch)
            total += _natural_loss(pred.data, train_ds.natural[idx], tstats,
                                   cfg.loss_kind) * idx.size
            count += idx.size
        train_loss = total / count
        trace.append((epoch, "train", train_loss, lr))
        criterion = train_loss
        if val_ds is not None:
            val_loss = _dataset_loss(model, val_ds, cfg, tstats)
            trace.append((epoch, "val", val_loss, lr))
            criterion = val_loss
        if criterion < best.criterion:
            best = _Best(epoch=epoch, criterion=criterion,
                         params=model.state_arrays(), adam=_copy_adam(adam))
    return best, trace


def _train_on_rows(model: Vs30Model, manifest: DatasetManifest, rows,
                   spec: ModelSpec, cfg: TrainConfig, fold: int,
                   split_rng, shuffle_rng, drop_rng,
                   transfer: dict | None = None,
                   plan: FoldPlan | None = None) -> TrainResult:
    val_ids = _split_val_stations({r.station_id for r in rows},
                                  cfg.val_fraction, split_rng)
    ds, channel_stats, box, tstats, _ = assemble_dataset(manifest, rows, spec, cfg)
    mask = np.array([sid in val_ids for sid in ds.station_ids], dtype=bool)
    val_ds = ds.take(np.flatnonzero(mask)) if mask.any() else None
    train_ds = ds.take(np.flatnonzero(~mask))
    best, trace = _fit(model, train_ds, val_ds, cfg, tstats, shuffle_rng, drop_rng)
    ckpt = Checkpoint(spec=spec, params=best.params, adam=best.adam,
                      channel_stats=channel_stats, coord_box=box,
                      target_stats=tstats, config=cfg, fold=fold,
                      epoch=best.epoch, fold_plan=plan)
    return TrainResult(checkpoint=ckpt, trace=trace,
                       val_stations=tuple(sorted(val_ids)), transfer=transfer)


def train_single_phase(manifest: DatasetManifest, plan: FoldPlan, fold: int,
                       spec: ModelSpec, cfg: TrainConfig) -> TrainResult:
    """Fit one model on one fold's training stations, vs30 target."""
    if cfg.phase != "single":
        raise ConfigError(f"train_single_phase needs phase 'single', "
                          f"got {cfg.phase!r}")
    spec = _spec_with_cfg(spec, cfg)
    init_rng, split_rng, shuffle_rng, drop_rng = _streams(cfg, fold, "single")
    train_rows, _ = split_records(manifest, plan, fold)
    if not train_rows:
        raise DataError(f"fold {fold} has an empty training set")
    model = build_model(spec, init_rng)
    if cfg.freeze_encoder:
        _freeze_encoder(model)
    return _train_on_rows(model, manifest, train_rows, spec, cfg, fold,
                          split_rng, shuffle_rng, drop_rng, plan=plan)


def pretrain_epicenter(manifest: DatasetManifest, spec: ModelSpec,
                       cfg: TrainConfig) -> TrainResult:
    """Fit the encoder topology to epicenter offsets on every record.

    vs30 labels are not needed; every event carries origin coordinates.
    The checkpoint's fold is -1 because no station is held out for test.
    """
    if cfg.phase != "pretrain":
        raise ConfigError(f"pretrain_epicenter needs phase 'pretrain', "
                          f"got {cfg.phase!r}")
    if spec.output_dim != 2:
        raise ConfigError(
            f"epicenter pretraining regresses (dlat, dlon); the model spec "
            f"must have output_dim 2, got {spec.output_dim}")
    spec = _spec_with_cfg(spec, cfg)
    init_rng, split_rng, shuffle_rng, drop_rng = _streams(cfg, -1, "pretrain")
    if not manifest.rows:
        raise DataError("manifest has no records")
    model = build_model(spec, init_rng)
    if cfg.freeze_encoder:
        _freeze_encoder(model)
    return _train_on_rows(model, manifest, list(manifest.rows), spec, cfg, -1,
                          split_rng, shuffle_rng, drop_rng)


def transfer_from_checkpoint(pretrained: Checkpoint, spec: ModelSpec,
                             cfg: TrainConfig, fold: int):
    """Fresh model with the pretrained encoder and a reinitialized head.

    Uses the fine-tune run's own init stream, so the head never matches
    the pretraining head. Returns (model, manifest) where the manifest
    lists copied vs reinitialized parameter names.
    """
    spec = _spec_with_cfg(spec, cfg)
    init_rng = _streams(cfg, fold, "finetune")[0]
    return transfer_encoder(pretrained.spec, pretrained.params, spec, init_rng)


def train_two_phase(pretrained: Checkpoint, manifest: DatasetManifest,
                    plan: FoldPlan, fold: int, spec: ModelSpec,
                    cfg: TrainConfig) -> TrainResult:
    """Transfer the pretrained encoder, then fine-tune on the labeled fold.

    All parameters train unless cfg.freeze_encoder is set. At epoch 0 the
    encoder is bitwise identical to the pretraining checkpoint.
    """
    if cfg.phase != "finetune":
        raise ConfigError(f"train_two_phase needs phase 'finetune', "
                          f"got {cfg.phase!r}")
    model, moved = transfer_from_checkpoint(pretrained, spec, cfg, fold)
    _, split_rng, shuffle_rng, drop_rng = _streams(cfg, fold, "finetune")
    train_rows, _ = split_records(manifest, plan, fold)
    if not train_rows:
        raise DataError(f"fold {fold} has an empty training set")
    if cfg.freeze_encoder:
        _freeze_encoder(model)
    return _train_on_rows(model, manifest, train_rows, model.spec, cfg, fold,
                          split_rng, shuffle_rng, drop_rng, transfer=moved,
                          plan=plan)


# ---------------------------------------------------------------- prediction

def model_from_checkpoint(ckpt: Checkpoint) -> Vs30Model:
    model = build_model(ckpt.spec, np.random.default_rng(0))
    model.load_state_arrays(ckpt.params)
    return model


def predict_samples(ckpt: Checkpoint, samples, model: Vs30Model | None = None,
                    batch_size: int = 256) -> np.ndarray:
    """Label-scale predictions [N, output_dim] for cropped windows."""
    if model is None:
        model = model_from_checkpoint(ckpt)
    items = samples if ckpt.spec.domain == "time" else [sigprep.to_spectral(s)
                                                        for s in samples]
    items = sigprep.apply_channel_stats(items, ckpt.channel_stats)
    if ckpt.spec.domain == "time":
        inputs = np.stack([it.samples for it in items])
    else:
        inputs = np.stack([it.data for it in items])
    coords = _coords_of(samples, ckpt.coord_box)
    preds = np.empty((len(samples), ckpt.spec.output_dim), dtype=np.float64)
    with no_grad():
        for lo in range(0, len(samples), batch_size):
            hi = min(lo + batch_size, len(samples))
            out = model.forward(inputs[lo:hi], coords[lo:hi], "eval")
            preds[lo:hi] = ckpt.target_stats.decode(out.data)
    return preds


def predict_record(ckpt: Checkpoint, rec: sigprep.WaveformRecord,
                   lat: float, lon: float,
                   model: Vs30Model | None = None) -> float:
    """vs30 in m/s for one raw record at a station location."""
    if ckpt.spec.output_dim != 1:
        raise ConfigError("predict_record needs a vs30 checkpoint "
                          "(output_dim 1)")
    rec = sigprep.normalize_rate(rec)
    w = sigprep.crop_around_pga(rec, ckpt.spec.duration_s,
                                station_lat=lat, station_lon=lon)
    if isinstance(w, sigprep.Rejected):
        raise DataError(f"record {w.record_id!r} rejected: {w.reason}")
    return float(predict_samples(ckpt, [w], model=model)[0, 0])


# ---------------------------------------------------------------- trace files

def write_trace(rows, path):
    """CSV `epoch,split,loss,lr`; floats written with repr for exactness."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for epoch, split, value, lr in rows:
            w.writerow([epoch, split, repr(float(value)), repr(float(lr))])


def read_trace(path) -> list:
    with open(path, encoding="utf-8", newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != list(TRACE_HEADER):
            raise FormatError(f"unexpected trace header {header}")
        return [(int(e), s, float(v), float(lr)) for e, s, v, lr in r]


# ---------------------------------------------------------------- checkpoints

def _tensor_records(ckpt: Checkpoint) -> list:
    records = [(name, ckpt.params[name]) for name in ckpt.params]
    records += [(f"adam.m:{n}", ckpt.adam.m[n]) for n in sorted(ckpt.adam.m)]
    records += [(f"adam.v:{n}", ckpt.adam.v[n]) for n in sorted(ckpt.adam.v)]
    return records


def save_checkpoint(ckpt: Checkpoint, path):
    """Little-endian container: magic, version u16, u32-length JSON block,
    then per-tensor records (u16 name length + UTF-8 name, u8 ndim,
    u32 dims, float32 payload)."""
    records = _tensor_records(ckpt)
    meta = {
        "spec": ckpt.spec.to_dict(),
        "config": ckpt.config.to_dict(),
        "config_hash": ckpt.config_hash,
        "fold": ckpt.fold,
        "fold_plan": None if ckpt.fold_plan is None else ckpt.fold_plan.to_dict(),
        "epoch": ckpt.epoch,
        "channel_stats": {"kind": ckpt.channel_stats.kind,
                          "mean": [float(v) for v in ckpt.channel_stats.mean],
                          "std": [float(v) for v in ckpt.channel_stats.std]},
        "coord_box": ckpt.coord_box.to_dict(),
        "target_stats": ckpt.target_stats.to_dict(),
        "adam": {"beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
                 "epsilon": ckpt.adam.epsilon, "base_lr": ckpt.adam.base_lr,
                 "decay_factor": ckpt.adam.decay_factor,
                 "decay_epochs": list(ckpt.adam.decay_epochs),
                 "step_count": ckpt.adam.step_count},
        "tensors": [name for name, _ in records],
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<H", ckpt.version))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name, arr in records:
            a = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", a.ndim))
            if a.ndim:
                f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise TruncatedError(f"checkpoint ends early in {what}")
    return b


def load_checkpoint(path, *, for_transfer: bool = False,
                    expect_config_hash: str | None = None) -> Checkpoint:
    """Read a checkpoint file back into memory.

    ``expect_config_hash`` guards resuming: a mismatch raises unless
    ``for_transfer`` is set, because transfer deliberately crosses
    configurations.
    """
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"not a checkpoint file: magic {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "the version field"))
        if version != CHECKPOINT_VERSION:
            raise BadVersionError(
                f"checkpoint version {version}; this build reads "
                f"{CHECKPOINT_VERSION}")
        (jlen,) = struct.unpack("<I", _read_exact(f, 4, "the header length"))
        meta = json.loads(_read_exact(f, jlen, "the metadata block"))
        arrays = {}
        while True:
            head = f.read(2)
            if head == b"":
                break
            if len(head) != 2:
                raise TruncatedError("checkpoint ends early in a tensor record")
            (nlen,) = struct.unpack("<H", head)
            name = _read_exact(f, nlen, "a tensor name").decode("utf-8")
            (ndim,) = struct.unpack(
                "<B", _read_exact(f, 1, f"parameter {name!r}"))
            dims = ()
            if ndim:
                dims = struct.unpack(
                    f"<{ndim}I",
                    _read_exact(f, 4 * ndim, f"parameter {name!r} dims"))
            count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            payload = f.read(count * 4)
            if len(payload) != count * 4:
                raise TruncatedError(
                    f"parameter {name!r}: expected {count * 4} payload bytes, "
                    f"found {len(payload)}")
            if name in arrays:
                raise FormatError(f"duplicate tensor record {name!r}")
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()

    expected = meta.get("tensors", [])
    if sorted(arrays) != sorted(expected):
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        parts = []
        if missing:
            parts.append(f"missing {missing}")
        if extra:
            parts.append(f"unexpected {extra}")
        raise FormatError("tensor records disagree with the metadata block: "
                          + "; ".join(parts))
    if expect_config_hash is not None and not for_transfer \
            and meta["config_hash"] != expect_config_hash:
        raise ConfigError(
            "checkpoint was produced under a different configuration "
            f"(hash {meta['config_hash'][:12]}..., expected "
            f"{expect_config_hash[:12]}...)")

    spec = ModelSpec.from_dict(meta["spec"])
    cfg = TrainConfig.from_dict(meta["config"])
    params = {n: arrays[n] for n in expected if not n.startswith("adam.")}
    m = {n[len("adam.m:"):]: arrays[n] for n in expected
         if n.startswith("adam.m:")}
    v = {n[len("adam.v:"):]: arrays[n] for n in expected
         if n.startswith("adam.v:")}
    am = meta["adam"]
    adam = AdamState(beta1=am["beta1"], beta2=am["beta2"],
                     epsilon=am["epsilon"], base_lr=am["base_lr"],
                     decay_factor=am["decay_factor"],
                     decay_epochs=tuple(am["decay_epochs"]),
                     step_count=am["step_count"], m=m, v=v)
    cs = meta["channel_stats"]
    channel_stats = sigprep.ChannelStats(
        mean=np.asarray(cs["mean"], dtype=np.float32),
        std=np.asarray(cs["std"], dtype=np.float32), kind=cs["kind"])
    plan = meta.get("fold_plan")
    return Checkpoint(spec=spec, params=params, adam=adam,
                      channel_stats=channel_stats,
                      coord_box=CoordinateBox.from_dict(meta["coord_box"]),
                      target_stats=TargetStats.from_dict(meta["target_stats"]),
                      config=cfg, fold=meta["fold"], epoch=meta["epoch"],
                      fold_plan=None if plan is None else FoldPlan.from_dict(plan),
                      version=version)
