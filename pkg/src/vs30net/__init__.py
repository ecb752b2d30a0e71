"""Vs30 regression from 3-channel strong-motion accelerograms.

Subpackages and modules:
  ndnet      numpy autodiff tensor core, layers, Adam
  sigprep    PGA-centered windows and time-frequency spectral volumes
  encoders   residual and temporal-convolutional encoders + decision head
  datapipe   manifests, waveform container I/O, folds, synthetic corpus
  trainer    training loops, transfer learning, checkpoints
  evalreport per-station and per-class error reports
  cli        the vs30 command-line entry point
"""

__version__ = "0.1.0"
