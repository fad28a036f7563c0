"""Train on the default synthetic corpus and compare against the majority baseline.

Pass an epoch count to shorten the run, e.g. ``python3 demos/train_small.py 10``.
The default protocol (60 epochs) takes a couple of minutes on one core.
"""

import dataclasses
import logging
import sys

import numpy as np

from dergcn import SynthSpec, TrainConfig, evaluate, gen_synthetic, train
from dergcn.metrics import majority_wf1_closed_form
from dergcn.training import initial_checkpoint, reconstruction_cosine

logging.basicConfig(level=logging.INFO, format="%(message)s")
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 60

ds = gen_synthetic(SynthSpec())
print(f"{len(ds)} dialogues, class counts {np.bincount(ds.labels()).tolist()}")

cfg = dataclasses.replace(TrainConfig(), epochs=epochs)
result = train(cfg, ds)
test = result.splits["test"]
report = evaluate(result.checkpoint, test)
print(report.to_text())

majority = int(np.bincount(result.splits["train"].labels()).argmax())
print(f"majority baseline WF1 {majority_wf1_closed_form(test.labels(), majority):.4f}, "
      f"model WF1 {report.wf1:.4f} (best epoch {result.checkpoint.epoch})")

before = reconstruction_cosine(initial_checkpoint(cfg, ds), test.dialogues)
after = reconstruction_cosine(result.final, test.dialogues)
print(f"masked-node reconstruction cosine {before:.3f} -> {after:.3f}")
