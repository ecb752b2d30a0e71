#!/usr/bin/env python3
"""Two-phase training: epicenter pretraining, then vs30 fine-tuning.

Labels are scarce; waveforms are not. Every record knows where its
event happened, so the encoder can first learn waveform structure by
regressing the epicenter offset (no vs30 labels involved), and the
vs30 run then starts from those weights with only the head fresh.
"""

import tempfile

import numpy as np

from vs30net import datapipe, trainer
from vs30net.encoders import ModelSpec
from vs30net.ndnet import no_grad

scratch = tempfile.TemporaryDirectory()
man = datapipe.synth_corpus(scratch.name, 30, 5, seed=8)
plan = datapipe.plan_folds(man.labeled_stations(), n_folds=5, seed=0)

# phase 1: the pretraining target is (dlat, dlon), so output_dim is 2
# and all records train regardless of labels
pre_spec = ModelSpec(encoder_kind="resnet", domain="frequency",
                     duration_s=15, output_dim=2)
pre_cfg = trainer.TrainConfig(phase="pretrain", target="epicenter",
                              epochs=3, batch_size=32, base_lr=1e-3,
                              dropout_rate=0.1, val_fraction=0.1, seed=0)
pre = trainer.pretrain_epicenter(man, pre_spec, pre_cfg)
pre_losses = [loss for _, split, loss, _ in pre.trace if split == "train"]
print(f"pretraining on {len(man.rows)} records: train loss "
      f"{pre_losses[0]:.4f} -> {pre_losses[-1]:.4f}")

# phase 2: same encoder topology, vs30 head, one held-out fold
spec = ModelSpec(encoder_kind="resnet", domain="frequency", duration_s=15)
cfg = trainer.TrainConfig(phase="finetune", target="vs30", epochs=3,
                          batch_size=32, base_lr=1e-3, dropout_rate=0.1,
                          val_fraction=0.1, seed=0)
res = trainer.train_two_phase(pre.checkpoint, man, plan, 0, spec, cfg)

copied = res.transfer["copied"]
reinit = res.transfer["reinitialized"]
print(f"\ntransfer manifest: {len(copied)} parameters copied, "
      f"{len(reinit)} reinitialized")
print("copied (first 4):       " + ", ".join(copied[:4]))
print("reinitialized (all):    " + ", ".join(reinit))

# the fine-tuned model starts from the pretrained encoder bit for bit
model, _ = trainer.transfer_from_checkpoint(pre.checkpoint, spec, cfg, 0)
pre_model = trainer.model_from_checkpoint(pre.checkpoint)
probe = np.random.default_rng(1).normal(
    size=(4,) + spec.input_shape).astype(np.float32)
with no_grad():
    a = pre_model.encode(probe, "eval").data
    b = model.encode(probe, "eval").data
print(f"\nencoder embeddings identical before fine-tuning: "
      f"{np.array_equal(a, b)}")

fine_losses = [loss for _, split, loss, _ in res.trace if split == "train"]
print(f"fine-tuning train loss {fine_losses[0]:.4f} -> {fine_losses[-1]:.4f}"
      f" (kept epoch {res.checkpoint.epoch})")

scratch.cleanup()
