"""Accelerogram preprocessing: PGA-centered windows and spectral volumes.

Pipeline stages, all pure functions over in-memory records:

  normalize_rate   resample to the common 100 Hz grid
  crop_around_pga  fixed-duration window with the peak at the midpoint
                   (records too short to center the peak are Rejected,
                   never padded)
  to_spectral      per-channel log-magnitude STFT, 51 one-sided bins
  standardize      per-channel affine scaling under training-fold stats

Channel order is E-W, N-S, vertical throughout; amplitudes are cm/s^2.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError, DimensionError

TARGET_RATE_HZ = 100.0
WINDOW_DURATIONS_S = (15, 30, 60)
STFT_WINDOW = 100  # samples; yields floor(100/2)+1 = 51 one-sided bins
STFT_HOP = 50
STFT_BINS = STFT_WINDOW // 2 + 1


@dataclass
class WaveformRecord:
    """One 3-channel strong-motion recording."""

    record_id: str
    station_id: str
    event_id: str
    sample_rate_hz: float
    channels: np.ndarray  # [3, n_samples], cm/s^2

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float32)
        if self.channels.ndim != 2 or self.channels.shape[0] != 3:
            raise DataError(
                f"record {self.record_id!r}: channels must be [3, n], "
                f"got {self.channels.shape}")
        if not self.sample_rate_hz > 0:
            raise DataError(
                f"record {self.record_id!r}: sample rate must be positive, "
                f"got {self.sample_rate_hz}")
        if self.n_samples == 0:
            raise DataError(f"record {self.record_id!r}: empty channels")

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]


@dataclass
class WindowedSample:
    """Fixed-length crop with the peak acceleration at the midpoint."""

    record_id: str
    duration_s: int
    samples: np.ndarray  # [3, L], L = duration_s * 100
    pga_value: float  # |peak|, cm/s^2
    pga_index: int  # == L // 2
    label_vs30: float | None = None
    station_lat: float = float("nan")
    station_lon: float = float("nan")
    event_lat: float = float("nan")
    event_lon: float = float("nan")


@dataclass
class Rejected:
    """Crop outcome for records that cannot center the peak; a value, not an error."""

    record_id: str
    reason: str


@dataclass
class SpectralVolume:
    """Per-channel log-magnitude STFT, shape [frames, 51, 3]."""

    record_id: str
    data: np.ndarray

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def bins(self) -> int:
        return self.data.shape[1]


@dataclass
class ChannelStats:
    """Per-channel mean/std fitted on a training fold only."""

    mean: np.ndarray  # [3]
    std: np.ndarray  # [3]
    kind: str  # "time" or "frequency"


def normalize_rate(rec: WaveformRecord, target_hz: float = TARGET_RATE_HZ) -> WaveformRecord:
    """Linear-interpolation resample onto the target grid.

    New length is floor((n-1) * target / rate) + 1: the new grid spans
    the same time interval, endpoint included when it lands on-grid.
    """
    if rec.sample_rate_hz < 1.0:
        raise DataError(
            f"record {rec.record_id!r}: sample rate {rec.sample_rate_hz} < 1 Hz")
    if rec.sample_rate_hz == target_hz:
        return rec
    n = rec.n_samples
    ratio = rec.sample_rate_hz / target_hz
    n_new = int((n - 1) * target_hz // rec.sample_rate_hz) + 1
    old_index = np.arange(n, dtype=np.float64)
    new_index = np.arange(n_new, dtype=np.float64) * ratio
    out = np.empty((3, n_new), dtype=np.float32)
    for c in range(3):
        out[c] = np.interp(new_index, old_index, rec.channels[c].astype(np.float64))
    return replace(rec, sample_rate_hz=float(target_hz), channels=out)


def find_pga(channels: np.ndarray) -> tuple[int, int, float]:
    """(time index, channel, |value|) of the joint absolute peak.

    Ties go to the earliest index, then the lowest channel number.
    """
    mags = np.abs(channels)
    per_time = mags.max(axis=0)
    t = int(per_time.argmax())
    c = int(mags[:, t].argmax())
    return t, c, float(mags[c, t])


def crop_around_pga(rec: WaveformRecord, duration_s: int, *,
                    label_vs30: float | None = None,
                    station_lat: float = float("nan"),
                    station_lon: float = float("nan"),
                    event_lat: float = float("nan"),
                    event_lon: float = float("nan")) -> WindowedSample | Rejected:
    """Cut [peak - L/2, peak + L/2) after per-channel mean removal.

    Requires the record to be on the 100 Hz grid. Returns Rejected when
    fewer than L/2 samples exist on either side of the peak.
    """
    if duration_s not in WINDOW_DURATIONS_S:
        raise ConfigError(
            f"duration_s must be one of {WINDOW_DURATIONS_S}, got {duration_s}")
    if rec.sample_rate_hz != TARGET_RATE_HZ:
        raise DataError(
            f"record {rec.record_id!r}: crop requires {TARGET_RATE_HZ:.0f} Hz, "
            f"got {rec.sample_rate_hz}; call normalize_rate first")
    length = int(duration_s * TARGET_RATE_HZ)
    half = length // 2
    # DC offsets would corrupt peak picking; the stored samples are the
    # demeaned ones so the midpoint invariant holds on what ships.
    demeaned = (rec.channels.astype(np.float64)
                - rec.channels.mean(axis=1, dtype=np.float64)[:, None])
    demeaned = demeaned.astype(np.float32)
    peak, _, pga = find_pga(demeaned)
    if peak < half or rec.n_samples - peak < half:
        return Rejected(rec.record_id,
                        f"peak at sample {peak} of {rec.n_samples} leaves fewer "
                        f"than {half} samples on one side")
    window = np.ascontiguousarray(demeaned[:, peak - half:peak + half])
    return WindowedSample(
        record_id=rec.record_id, duration_s=duration_s, samples=window,
        pga_value=pga, pga_index=half, label_vs30=label_vs30,
        station_lat=station_lat, station_lon=station_lon,
        event_lat=event_lat, event_lon=event_lon)


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def to_spectral(w: WindowedSample) -> SpectralVolume:
    """Short-time Fourier magnitudes, log(1+|X|), shape [D, 51, 3].

    Hann window of 100 samples, hop 50, one-sided spectrum; at 100 Hz
    the bin spacing is exactly 1 Hz. D = (L-100)/50 + 1.
    """
    samples = w.samples
    length = samples.shape[1]
    if length < STFT_WINDOW:
        raise DimensionError(
            f"window of {length} samples is shorter than the {STFT_WINDOW}-sample "
            f"transform window")
    if length % STFT_HOP != 0:
        raise DimensionError(
            f"window length {length} is not a multiple of hop {STFT_HOP}")
    frames = (length - STFT_WINDOW) // STFT_HOP + 1
    taper = _hann_periodic(STFT_WINDOW)
    out = np.empty((frames, STFT_BINS, 3), dtype=np.float32)
    x = samples.astype(np.float64)
    for f in range(frames):
        seg = x[:, f * STFT_HOP:f * STFT_HOP + STFT_WINDOW] * taper
        mag = np.abs(np.fft.rfft(seg, axis=1))
        out[f] = np.log1p(mag).T
    if not np.isfinite(out).all():
        raise DataError(f"record {w.record_id!r}: non-finite spectral values")
    return SpectralVolume(record_id=w.record_id, data=out)


def fit_channel_stats(items) -> ChannelStats:
    """Per-channel mean/std over a batch (training fold only).

    Accepts WindowedSample (channel axis 0) or SpectralVolume (channel
    axis 2) batches; population std.
    """
    arrays, kind = _collect(items)
    stacked = np.concatenate([a.reshape(a.shape[0], -1) for a in arrays], axis=1)
    mean = stacked.mean(axis=1, dtype=np.float64)
    std = stacked.std(axis=1, dtype=np.float64)
    for c in range(3):
        if std[c] == 0.0:
            raise DataError(f"channel {c} has zero variance; cannot standardize")
    return ChannelStats(mean=mean.astype(np.float32), std=std.astype(np.float32),
                        kind=kind)


def apply_channel_stats(items, stats: ChannelStats):
    """Return standardized copies: (x - mean) / std per channel, once."""
    arrays, kind = _collect(items)
    if kind != stats.kind:
        raise ConfigError(f"stats fitted on {stats.kind} data applied to {kind} data")
    out = []
    for item, arr in zip(items, arrays):
        shape = (3,) + (1,) * (arr.ndim - 1)
        scaled = ((arr - stats.mean.reshape(shape))
                  / stats.std.reshape(shape)).astype(np.float32)
        if isinstance(item, WindowedSample):
            out.append(replace(item, samples=scaled))
        else:
            out.append(replace(item, data=np.ascontiguousarray(
                scaled.reshape(3, item.frames, item.bins).transpose(1, 2, 0))))
    return out


def standardize(items, stats: ChannelStats | None = None):
    """Standardize a batch; fit stats first when none are given.

    Returns (standardized items, stats). Pass training-fold stats when
    transforming validation or test data.
    """
    if stats is None:
        stats = fit_channel_stats(items)
    return apply_channel_stats(items, stats), stats


def _collect(items):
    if not items:
        raise DataError("empty batch")
    first = items[0]
    if isinstance(first, WindowedSample):
        return [np.asarray(i.samples, dtype=np.float64) for i in items], "time"
    if isinstance(first, SpectralVolume):
        # move channels first: [D, 51, 3] -> [3, D, 51]
        return [np.asarray(i.data, dtype=np.float64).transpose(2, 0, 1)
                for i in items], "frequency"
    raise ConfigError(f"cannot standardize items of type {type(first).__name__}")
