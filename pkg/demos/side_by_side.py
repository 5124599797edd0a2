"""
Side-by-side preference model
=============================

Builds a small clean-vs-degraded corpus on disk, trains the antisymmetric
bilinear preference model on it, and checks its two defining properties.
"""

import json
import os
import tempfile

import numpy as np

from ttseval import pipeline as pl
from ttseval.sbs_model import SbsModelParams, predict, score
from ttseval.synth import clean_vs_degraded_corpus

# antisymmetry holds for any W, trained or not
rng = np.random.default_rng(0)
p = SbsModelParams(rng.normal(size=(8, 8)))
a, b = rng.normal(size=8), rng.normal(size=8)
print("p(a,b) + p(b,a) =", predict(p, a, b) + predict(p, b, a))
print("score(a,a) =", score(p, a, a))

work = tempfile.mkdtemp(prefix="sbs_demo_")
manifest, ratings = clean_vs_degraded_corpus(os.path.join(work, "corpus"), n_texts=60, seed=0)
cfg = pl.RunConfig(out_dir=os.path.join(work, "run"), manifest=manifest, ratings=ratings, seed=0)
metrics = pl.cmd_pipeline_train_sbs(cfg)
print(json.dumps({k: metrics[k] for k in ("accuracy", "auc_roc", "n")}, indent=2))
print("artifacts in", cfg.out_dir, ":", sorted(os.listdir(cfg.out_dir)))
