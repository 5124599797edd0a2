"""
Undoing rater bias
==================

A simulated listening panel where every rater has their own offset and
scale. Per-rater z-scoring followed by a global rescale brings the panel
back into agreement.
"""

import numpy as np

from ttseval.metrics import lcc
from ttseval.ratings import clip_mos, inter_rater_rmse, rater_stats, standardize
from ttseval.synth import simulate_panel

records, latent = simulate_panel(n_raters=20, n_clips=200, seed=0)

# how harsh or generous is each rater?
stats = rater_stats(records)
for rater in sorted(stats)[:5]:
    st = stats[rater]
    print(f"{rater}: mean {st.mu:.2f}  sd {st.sigma:.2f}  n={st.count}")

std = standardize(records)
print("inter-rater RMSE raw:", round(inter_rater_rmse(records), 4))
print("inter-rater RMSE std:", round(inter_rater_rmse(std, use_std=True), 4))

clips = sorted(latent)
truth = np.array([latent[c] for c in clips])
raw = clip_mos(records)
fixed = clip_mos(std, use_std=True)
print("LCC vs latent, raw MOS:", round(lcc([raw[c] for c in clips], truth), 4))
print("LCC vs latent, std MOS:", round(lcc([fixed[c] for c in clips], truth), 4))
