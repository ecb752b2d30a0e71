#!/usr/bin/env python3
"""From a raw accelerogram to fixed-length model inputs.

Synthesizes one 3-channel record, centers a window on its peak ground
acceleration, and turns the window into the spectral volume the
frequency-domain encoders consume.
"""

import numpy as np

from vs30net import sigprep
from vs30net.datapipe import EventMeta, StationMeta, synth_record

station = StationMeta("ST01", lat=39.2, lon=27.5, vs30_mps=420.0)
event = EventMeta("EQ01", origin_lat=38.9, origin_lon=27.9, magnitude=5.1)

rec = synth_record(station, event, seed=7)
print(f"record {rec.record_id}: {rec.n_samples} samples "
      f"at {rec.sample_rate_hz:.0f} Hz "
      f"({rec.n_samples / rec.sample_rate_hz:.1f} s)")

t, c, pga = sigprep.find_pga(rec.channels)
print(f"PGA {pga:.4f} cm/s^2 on channel {c} at t = {t / 100:.2f} s")

# crops keep the peak at the window midpoint; too-short records are
# returned as Rejected values rather than raised
for duration in (15, 30, 60):
    w = sigprep.crop_around_pga(rec, duration, label_vs30=station.vs30_mps,
                                station_lat=station.lat,
                                station_lon=station.lon)
    if isinstance(w, sigprep.Rejected):
        print(f"{duration:3d} s window rejected: {w.reason}")
        continue
    mid = w.samples.shape[1] // 2
    peak_at_mid = abs(w.samples[:, mid]).max()
    print(f"{duration:3d} s window: shape {w.samples.shape}, "
          f"|x[mid]| = {peak_at_mid:.4f} (= PGA of the demeaned trace)")

    vol = sigprep.to_spectral(w)
    print(f"      spectral volume {vol.data.shape} "
          f"(frames x bins x channels), "
          f"log-magnitude range [{vol.data.min():.2f}, {vol.data.max():.2f}]")

# the resampler puts arbitrary-rate input onto the 100 Hz grid first
coarse = sigprep.WaveformRecord(
    record_id="coarse", station_id="ST01", event_id="EQ01",
    sample_rate_hz=50.0, channels=rec.channels[:, ::2])
back = sigprep.normalize_rate(coarse)
print(f"\n50 Hz record with {coarse.n_samples} samples resampled to "
      f"{back.n_samples} samples at {back.sample_rate_hz:.0f} Hz")

# a record whose peak sits too close to an edge cannot be windowed
stub = sigprep.WaveformRecord(
    record_id="stub", station_id="ST01", event_id="EQ01",
    sample_rate_hz=100.0, channels=rec.channels[:, :900])
out = sigprep.crop_around_pga(stub, 15)
print(f"900-sample record, 15 s crop: "
      f"{'rejected, ' + out.reason if isinstance(out, sigprep.Rejected) else 'accepted'}")
