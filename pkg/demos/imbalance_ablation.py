"""Does the balanced triplet term help rare classes? Full objective vs cross-entropy only.

Both runs share the seed, split and every other setting. On the default
seed the full objective lifts class 2 from near zero; other seeds are noisier.
"""

import numpy as np

from dergcn import SynthSpec, TrainConfig, ablate, gen_synthetic

ds = gen_synthetic(SynthSpec())
cfg = TrainConfig()
share = np.bincount(ds.labels()) / len(ds.labels())
print("class share:", np.round(share, 3).tolist())
for variant in ("full", "ce-only"):
    rep = ablate(cfg, ds, variant)
    print(f"{variant:<8} WF1 {rep.wf1:.3f}  per-class F1 {np.round(rep.per_class_f1, 3).tolist()}")
