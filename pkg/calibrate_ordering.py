"""Calibration run for the synthetic benchmark ordering experiment."""
import sys
import time

import numpy as np

from hoopnet import CourtSpec, SynthConfig, SegmentationConfig, TrainConfig
from hoopnet.bench import evaluate
from hoopnet.data import split, synthesize, window
from hoopnet.labels import label_sequence
from hoopnet.model import ArchitectureConfig, HPNModel, Variant
from hoopnet.train import LabeledSequence, stage_schedule, run_stage
from hoopnet.util import derive_seed, rng_for

SEED = int(sys.argv[1]) if len(sys.argv) > 1 else 2026

t0 = time.time()
spec = CourtSpec()
synth = SynthConfig(n_possessions=220, seed=derive_seed(SEED, "synth"))
seg = SegmentationConfig(seed=derive_seed(SEED, "labels"))
arch = ArchitectureConfig(conv_filters=(8, 16), conv_kernels=(3, 3), conv_strides=(2, 1),
                          gru_cells=64, transfer_hidden=64)
tcfg = TrainConfig(epochs_pretrain=3, epochs_finetune=1, holdout_eval_max=96,
                   early_stop_patience=0)

labeled = []
for p in synthesize(synth, spec):
    rng = rng_for(SEED, "window", p.id)
    for s in window(p, spec, rng, windows_per_player=2):
        labeled.append(LabeledSequence(s, label_sequence(s, spec, seg)))
train, holdout = split(labeled, 1 / 11, derive_seed(SEED, "split"))
print(f"[{time.time()-t0:6.1f}s] data: {len(train)} train / {len(holdout)} holdout", flush=True)

results = {}
for variant in (Variant.CNN, Variant.GRU_CNN, Variant.H_ATT):
    model = HPNModel(spec, arch, variant, derive_seed(SEED, "init", variant.value))
    for stage in stage_schedule(variant):
        ts = time.time()
        recs = run_stage(model, train, holdout, stage, tcfg, spec, SEED)
        for r in recs:
            print(f"[{time.time()-t0:6.1f}s] {variant.value:8s} {stage.value:18s} ep{r.epoch} "
                  f"loss {r.loss:7.3f} d0 {r.acc_delta[0]:.3f} macro {r.macro_acc} tv {r.tv_monitor}",
                  flush=True)
    m = evaluate(model, holdout, spec)
    results[variant.value] = m
    print(f"[{time.time()-t0:6.1f}s] FINAL {variant.value}: d={['%.4f' % a for a in m.acc_delta]} "
          f"macro {m.macro_acc} macro_late {m.macro_acc_excl_burnin} att {m.attention_acc} tv {m.tv_monitor}",
          flush=True)

cnn = results["cnn"].acc_delta[0]
gru = results["gru_cnn"].acc_delta[0]
att = results["h_att"].acc_delta[0]
late = results["h_att"].macro_acc_excl_burnin
print(f"\nTOTAL {time.time()-t0:.0f}s")
print(f"(a) h_att d0 {att:.4f} vs cnn {cnn:.4f}: margin {att-cnn:+.4f} (need >= +0.05)")
print(f"(b) macro late {late:.4f} (need >= {10/90:.4f})")
print(f"(c) ordering h_att {att:.4f} >= gru_cnn {gru:.4f} >= cnn {cnn:.4f}: "
      f"{att >= gru >= cnn}")
