"""Model families: residual and temporal-convolutional encoders.

Both encoders reduce a 3-channel input to a fixed-width embedding that
a coordinate-fused decision head maps to the regression output:

  resnet  stem conv(K=7, stride 2) -> BN -> relu -> max-pool 2, then
          3 stages x 2 basic blocks (conv-BN-relu-conv-BN + shortcut,
          post-add relu; stage entries downsample by 2 with a 1x1
          projection), global average pool. 1-D over [3, L] waveforms,
          2-D over [3, D, 51] spectral volumes.
  tcn     6 residual blocks of causal dilated conv(K=3) -> BN -> relu
          -> dropout -> pointwise conv, dilations 1..32 (receptive
          field 1 + 2*63 = 127 samples); the feature at the last time
          index is projected to the embedding. Spectral input feeds the
          51 bins x 3 channels as 153 conv channels over the frame
          axis, with a time max-pool(2) after each of the first three
          blocks.

Parameters are named dotted paths ("encoder.stage1.block2.conv1.weight",
"head.fc1.bias"); batch-norm running stats ride along as non-trainable
entries, so a name->array dump is the complete model state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .ndnet import (LayerParams, Tensor, batch_norm, concat, conv1d, conv2d,
                    dense, dropout, global_avg_pool, glorot_uniform, max_pool,
                    relu, take_time_index)

SPECTRAL_BINS = 51


@dataclass
class ModelSpec:
    """Architecture hyperparameters; a pure value object."""

    encoder_kind: str  # "resnet" | "tcn"
    domain: str  # "time" | "frequency"
    duration_s: int  # 15 | 30 | 60
    output_dim: int = 1  # 1 = Vs30, 2 = epicenter offsets
    dropout_rate: float = 0.1
    embed_dim: int = 64
    head_widths: tuple = (64, 32)
    tcn_blocks: int = 6
    tcn_kernel: int = 3
    tcn_filters: int = 32
    tcn_dilations: tuple = (1, 2, 4, 8, 16, 32)
    resnet_stem: int = 16
    resnet_stages: tuple = (16, 32, 64)
    resnet_blocks_per_stage: int = 2

    def __post_init__(self):
        self.head_widths = tuple(self.head_widths)
        self.tcn_dilations = tuple(self.tcn_dilations)
        self.resnet_stages = tuple(self.resnet_stages)
        if self.encoder_kind not in ("resnet", "tcn"):
            raise ConfigError(f"encoder_kind must be resnet or tcn, "
                              f"got {self.encoder_kind!r}")
        if self.domain not in ("time", "frequency"):
            raise ConfigError(f"domain must be time or frequency, "
                              f"got {self.domain!r}")
        if self.duration_s not in (15, 30, 60):
            raise ConfigError(f"duration_s must be 15, 30 or 60, "
                              f"got {self.duration_s}")
        if self.output_dim not in (1, 2):
            raise ConfigError(f"output_dim must be 1 or 2, got {self.output_dim}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0,1), "
                              f"got {self.dropout_rate}")
        if len(self.head_widths) != 2:
            raise ConfigError("head has exactly two hidden dense layers")
        if len(self.tcn_dilations) != self.tcn_blocks:
            raise ConfigError("need one dilation per TCN block")
        if self.encoder_kind == "resnet" and self.resnet_stages[-1] != self.embed_dim:
            raise ConfigError(
                f"global average pooling emits {self.resnet_stages[-1]} channels; "
                f"embed_dim must match (got {self.embed_dim})")

    @property
    def window_samples(self) -> int:
        return self.duration_s * 100

    @property
    def spectral_frames(self) -> int:
        return (self.window_samples - 100) // 50 + 1

    @property
    def input_shape(self) -> tuple:
        """Per-sample shape the model consumes (no batch axis)."""
        if self.domain == "time":
            return (3, self.window_samples)
        return (self.spectral_frames, SPECTRAL_BINS, 3)

    @property
    def receptive_field(self) -> int:
        """Input samples visible to one output step of the TCN stack."""
        if self.encoder_kind != "tcn":
            return 0
        return 1 + (self.tcn_kernel - 1) * sum(self.tcn_dilations)

    def to_dict(self) -> dict:
        return {
            "encoder_kind": self.encoder_kind, "domain": self.domain,
            "duration_s": self.duration_s, "output_dim": self.output_dim,
            "dropout_rate": self.dropout_rate, "embed_dim": self.embed_dim,
            "head_widths": list(self.head_widths),
            "tcn_blocks": self.tcn_blocks, "tcn_kernel": self.tcn_kernel,
            "tcn_filters": self.tcn_filters,
            "tcn_dilations": list(self.tcn_dilations),
            "resnet_stem": self.resnet_stem,
            "resnet_stages": list(self.resnet_stages),
            "resnet_blocks_per_stage": self.resnet_blocks_per_stage,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


@dataclass
class CoordinateInput:
    """Min-max normalized station coordinates; clamped marks out-of-box."""

    lat_norm: float
    lon_norm: float
    clamped: bool = False


@dataclass
class CoordinateBox:
    """Dataset bounding box used to normalize coordinates; persisted."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    @classmethod
    def from_stations(cls, stations) -> "CoordinateBox":
        lats = [s.lat for s in stations]
        lons = [s.lon for s in stations]
        if not lats:
            raise DataError("cannot build a coordinate box from zero stations")
        return cls(min(lats), max(lats), min(lons), max(lons))

    def normalize(self, lat: float, lon: float) -> CoordinateInput:
        u = _minmax(lat, self.lat_min, self.lat_max)
        v = _minmax(lon, self.lon_min, self.lon_max)
        clamped = not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0)
        return CoordinateInput(min(max(u, 0.0), 1.0), min(max(v, 0.0), 1.0),
                               clamped)

    def to_dict(self) -> dict:
        return {"lat_min": self.lat_min, "lat_max": self.lat_max,
                "lon_min": self.lon_min, "lon_max": self.lon_max}

    @classmethod
    def from_dict(cls, d: dict) -> "CoordinateBox":
        return cls(**d)


def _minmax(x, lo, hi):
    if hi == lo:
        return 0.5
    return (x - lo) / (hi - lo)


class Vs30Model:
    """Parameter container plus forward passes for one ModelSpec."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator):
        self.spec = spec
        self.params: list[LayerParams] = []
        self._by_name: dict[str, LayerParams] = {}
        if spec.encoder_kind == "resnet":
            self._build_resnet(rng)
        else:
            self._build_tcn(rng)
        self._build_head(rng)

    # ------------------------------------------------------- registry

    def _add(self, name: str, array, trainable: bool = True):
        if name in self._by_name:
            raise ConfigError(f"duplicate parameter name {name!r}")
        p = LayerParams(name=name, tensor=Tensor(array, requires_grad=trainable),
                        trainable=trainable)
        self.params.append(p)
        self._by_name[p.name] = p
        return p

    def param(self, name: str) -> LayerParams:
        return self._by_name[name]

    def has_param(self, name: str) -> bool:
        return name in self._by_name

    def tensor(self, name: str) -> Tensor:
        return self._by_name[name].tensor

    def encoder_param_names(self) -> list:
        return [p.name for p in self.params if p.name.startswith("encoder.")]

    def head_param_names(self) -> list:
        return [p.name for p in self.params if p.name.startswith("head.")]

    def trainable_count(self) -> int:
        return int(sum(p.tensor.data.size for p in self.params if p.trainable))

    @property
    def rf_exceeds_input(self) -> bool:
        """True when the TCN stack sees the whole input (a caution, not an error)."""
        s = self.spec
        if s.encoder_kind != "tcn":
            return False
        length = s.window_samples if s.domain == "time" else s.spectral_frames
        return s.receptive_field > length

    def state_arrays(self) -> dict:
        return {p.name: p.tensor.data.copy() for p in self.params}

    def load_state_arrays(self, arrays: dict):
        for p in self.params:
            if p.name not in arrays:
                raise DataError(f"missing parameter {p.name!r}")
            src = np.asarray(arrays[p.name], dtype=np.float32)
            if src.shape != p.tensor.data.shape:
                raise DataError(f"parameter {p.name!r}: shape {src.shape} "
                                f"!= {p.tensor.data.shape}")
            p.tensor.data[...] = src

    # ------------------------------------------------------ builders

    def _conv_init(self, rng, name, c_out, c_in, *kernel):
        fan_in = c_in * int(np.prod(kernel))
        fan_out = c_out * int(np.prod(kernel))
        self._add(f"{name}.weight",
                  glorot_uniform((c_out, c_in) + kernel, fan_in, fan_out, rng))
        self._add(f"{name}.bias", np.zeros(c_out, dtype=np.float32))

    def _bn_init(self, name, channels):
        self._add(f"{name}.gamma", np.ones(channels, dtype=np.float32))
        self._add(f"{name}.beta", np.zeros(channels, dtype=np.float32))
        self._add(f"{name}.running_mean", np.zeros(channels, dtype=np.float32),
                  trainable=False)
        self._add(f"{name}.running_var", np.ones(channels, dtype=np.float32),
                  trainable=False)

    def _dense_init(self, rng, name, f_out, f_in):
        self._add(f"{name}.weight", glorot_uniform((f_out, f_in), f_in, f_out, rng))
        self._add(f"{name}.bias", np.zeros(f_out, dtype=np.float32))

    def _build_resnet(self, rng):
        s = self.spec
        two_d = s.domain == "frequency"
        in_ch = 3
        stem_kernel = (7, 7) if two_d else (7,)
        self._conv_init(rng, "encoder.stem.conv", s.resnet_stem, in_ch, *stem_kernel)
        self._bn_init("encoder.stem.bn", s.resnet_stem)
        prev = s.resnet_stem
        kernel = (3, 3) if two_d else (3,)
        ones = (1, 1) if two_d else (1,)
        for si, width in enumerate(s.resnet_stages, start=1):
            for bi in range(1, s.resnet_blocks_per_stage + 1):
                prefix = f"encoder.stage{si}.block{bi}"
                c_in = prev if bi == 1 else width
                self._conv_init(rng, f"{prefix}.conv1", width, c_in, *kernel)
                self._bn_init(f"{prefix}.bn1", width)
                self._conv_init(rng, f"{prefix}.conv2", width, width, *kernel)
                self._bn_init(f"{prefix}.bn2", width)
                if bi == 1:  # stage entry: stride-2 shortcut projection
                    self._conv_init(rng, f"{prefix}.proj", width, c_in, *ones)
                    self._bn_init(f"{prefix}.proj_bn", width)
            prev = width

    def _build_tcn(self, rng):
        s = self.spec
        in_ch = 3 if s.domain == "time" else 3 * SPECTRAL_BINS
        prev = in_ch
        for bi in range(1, s.tcn_blocks + 1):
            prefix = f"encoder.block{bi}"
            self._conv_init(rng, f"{prefix}.conv1", s.tcn_filters, prev, s.tcn_kernel)
            self._bn_init(f"{prefix}.bn1", s.tcn_filters)
            self._conv_init(rng, f"{prefix}.conv2", s.tcn_filters, s.tcn_filters, 1)
            if prev != s.tcn_filters:
                self._conv_init(rng, f"{prefix}.proj", s.tcn_filters, prev, 1)
            prev = s.tcn_filters
        self._dense_init(rng, "encoder.readout", s.embed_dim, s.tcn_filters)

    def _build_head(self, rng):
        s = self.spec
        widths = [s.embed_dim + 2, *s.head_widths]
        self._dense_init(rng, "head.fc1", widths[1], widths[0])
        self._dense_init(rng, "head.fc2", widths[2], widths[1])
        self._dense_init(rng, "head.out", s.output_dim, widths[2])

    def reinit_head(self, rng):
        """Fresh head weights (used after encoder transfer)."""
        for name in self.head_param_names():
            p = self._by_name[name]
            self.params.remove(p)
            del self._by_name[name]
        self._build_head(rng)

    # ------------------------------------------------------- forward

    def _bn(self, name, x, mode):
        return batch_norm(x, self.tensor(f"{name}.gamma"),
                          self.tensor(f"{name}.beta"),
                          self.tensor(f"{name}.running_mean"),
                          self.tensor(f"{name}.running_var"), mode)

    def _conv(self, name, x, **kw):
        op = conv2d if self.tensor(f"{name}.weight").ndim == 4 else conv1d
        return op(x, self.tensor(f"{name}.weight"), self.tensor(f"{name}.bias"),
                  **kw)

    def basic_block(self, prefix: str, x: Tensor, mode: str) -> Tensor:
        """One residual unit; stage entries carry a stride-2 projection."""
        entry = self.has_param(f"{prefix}.proj.weight")
        stride = 2 if entry else 1
        m = relu(self._bn(f"{prefix}.bn1",
                          self._conv(f"{prefix}.conv1", x, stride=stride,
                                     padding="same"), mode))
        m = self._bn(f"{prefix}.bn2",
                     self._conv(f"{prefix}.conv2", m, stride=1, padding="same"),
                     mode)
        if entry:
            shortcut = self._bn(f"{prefix}.proj_bn",
                                self._conv(f"{prefix}.proj", x, stride=stride,
                                           padding="same"), mode)
        else:
            shortcut = x
        return relu(m + shortcut)

    def tcn_block(self, prefix: str, x: Tensor, dilation: int, mode: str,
                  rng=None) -> Tensor:
        m = relu(self._bn(f"{prefix}.bn1",
                          self._conv(f"{prefix}.conv1", x, dilation=dilation,
                                     padding="causal"), mode))
        m = dropout(m, self.spec.dropout_rate, mode, rng)
        m = self._conv(f"{prefix}.conv2", m, padding="causal")
        if self.has_param(f"{prefix}.proj.weight"):
            x = self._conv(f"{prefix}.proj", x, padding="causal")
        return m + x

    def _to_network_layout(self, batch: np.ndarray) -> np.ndarray:
        s = self.spec
        expect = (batch.shape[0],) + s.input_shape
        if batch.shape != expect:
            raise DimensionError(
                f"{s.encoder_kind}/{s.domain}/{s.duration_s}s expects batch shape "
                f"{expect}, got {batch.shape}")
        if s.domain == "time":
            return batch
        if s.encoder_kind == "resnet":  # [N, D, 51, 3] -> [N, 3, D, 51]
            return np.ascontiguousarray(batch.transpose(0, 3, 1, 2))
        n, frames = batch.shape[0], batch.shape[1]
        # [N, D, 51, 3] -> 153 channels over the frame axis
        return np.ascontiguousarray(
            batch.transpose(0, 2, 3, 1).reshape(n, 3 * SPECTRAL_BINS, frames))

    def encode(self, batch: np.ndarray, mode: str, rng=None,
               readout_index: int | None = None) -> Tensor:
        """Embedding [N, embed_dim] from a canonical input batch.

        Batch layout: time domain [N, 3, L]; frequency domain
        [N, D, 51, 3] (spectral-volume order). readout_index overrides
        the TCN's default last-step feature pick, which lets a longer
        probe input exercise causality; it is ignored by the resnet.
        """
        x = Tensor(self._to_network_layout(batch))
        if self.spec.encoder_kind == "resnet":
            return self._encode_resnet(x, mode)
        return self._encode_tcn(x, mode, rng, readout_index)

    def _encode_resnet(self, x: Tensor, mode: str) -> Tensor:
        s = self.spec
        window = (2, 2) if s.domain == "frequency" else 2
        h = relu(self._bn("encoder.stem.bn",
                          self._conv("encoder.stem.conv", x, stride=2,
                                     padding="same"), mode))
        h = max_pool(h, window)
        for si in range(1, len(s.resnet_stages) + 1):
            for bi in range(1, s.resnet_blocks_per_stage + 1):
                h = self.basic_block(f"encoder.stage{si}.block{bi}", h, mode)
        return global_avg_pool(h)

    def _encode_tcn(self, x: Tensor, mode: str, rng, readout_index) -> Tensor:
        s = self.spec
        h = x
        for bi, dilation in enumerate(s.tcn_dilations, start=1):
            h = self.tcn_block(f"encoder.block{bi}", h, dilation, mode, rng)
            if s.domain == "frequency" and bi <= 3:
                h = max_pool(h, 2)
        idx = -1 if readout_index is None else readout_index
        feat = take_time_index(h, idx)
        return dense(feat, self.tensor("encoder.readout.weight"),
                     self.tensor("encoder.readout.bias"))

    def decision_head(self, embedding: Tensor, coords: np.ndarray, mode: str,
                      rng=None) -> Tensor:
        coords = np.asarray(coords, dtype=np.float32)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise DimensionError(f"coords must be [N, 2], got {coords.shape}")
        if coords.shape[0] != embedding.shape[0]:
            raise DimensionError(
                f"{embedding.shape[0]} embeddings vs {coords.shape[0]} coordinates")
        h = concat([embedding, Tensor(coords)], axis=1)
        h = dropout(relu(dense(h, self.tensor("head.fc1.weight"),
                               self.tensor("head.fc1.bias"))),
                    self.spec.dropout_rate, mode, rng)
        h = dropout(relu(dense(h, self.tensor("head.fc2.weight"),
                               self.tensor("head.fc2.bias"))),
                    self.spec.dropout_rate, mode, rng)
        return dense(h, self.tensor("head.out.weight"),
                     self.tensor("head.out.bias"))

    def forward(self, batch: np.ndarray, coords: np.ndarray, mode: str,
                rng=None) -> Tensor:
        return self.decision_head(self.encode(batch, mode, rng), coords, mode, rng)


def build_model(spec: ModelSpec, rng: np.random.Generator) -> Vs30Model:
    return Vs30Model(spec, rng)


def build_resnet_encoder(spec: ModelSpec, rng: np.random.Generator) -> Vs30Model:
    if spec.encoder_kind != "resnet":
        raise ConfigError(f"spec.encoder_kind is {spec.encoder_kind!r}")
    return Vs30Model(spec, rng)


def build_tcn_encoder(spec: ModelSpec, rng: np.random.Generator) -> Vs30Model:
    if spec.encoder_kind != "tcn":
        raise ConfigError(f"spec.encoder_kind is {spec.encoder_kind!r}")
    return Vs30Model(spec, rng)


def transfer_encoder(src_spec: ModelSpec, src_arrays: dict, dst_spec: ModelSpec,
                     rng: np.random.Generator):
    """New model with encoder weights copied from a source state dump.

    Head parameters are freshly initialized. Returns (model, manifest)
    where manifest lists copied vs reinitialized parameter paths.
    Duration may differ (encoder shapes are length-agnostic); kind and
    domain may not.
    """
    if src_spec.encoder_kind != dst_spec.encoder_kind:
        raise ConfigError(f"cannot transfer {src_spec.encoder_kind} encoder "
                          f"into a {dst_spec.encoder_kind} model")
    if src_spec.domain != dst_spec.domain:
        raise ConfigError(f"cannot transfer a {src_spec.domain}-domain encoder "
                          f"into a {dst_spec.domain}-domain model")
    model = Vs30Model(dst_spec, rng)
    encoder_names = model.encoder_param_names()
    missing = [n for n in encoder_names if n not in src_arrays]
    if missing:
        raise DataError("source checkpoint lacks encoder parameters: "
                        + ", ".join(sorted(missing)))
    bad = [n for n in encoder_names
           if np.shape(src_arrays[n]) != model.tensor(n).data.shape]
    if bad:
        detail = ", ".join(
            f"{n} {np.shape(src_arrays[n])}->{model.tensor(n).data.shape}"
            for n in sorted(bad))
        raise DataError(f"incompatible encoder parameters: {detail}")
    for n in encoder_names:
        model.tensor(n).data[...] = np.asarray(src_arrays[n], dtype=np.float32)
    manifest = {"copied": sorted(encoder_names),
                "reinitialized": sorted(model.head_param_names())}
    return model, manifest
