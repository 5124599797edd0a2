"""
Stacked MOS prediction
======================

Three weak learners (ridge, linear SVR, shallow tree) each see a different
slice of the signal. A small MLP trained on their out-of-fold predictions
does better than any one of them.
"""

import numpy as np

from ttseval.metrics import lcc, rmse
from ttseval.mos_ensemble import StackConfig, fit_stack, predict_mos

r = np.random.default_rng(0)
n = 600
A, T = r.normal(size=(n, 16)), r.normal(size=(n, 8))
# a smooth linear part plus a step only a tree picks up cleanly
y = 3 + A @ (r.normal(size=16) * 0.3) / 4 + 0.8 * np.sign(T[:, 0]) + 0.1 * r.normal(size=n)
X = np.hstack([A, T])

model = fit_stack(X[:400], y[:400], StackConfig(k_folds=5, seed=0))
weak = model.weak.predict(model.standardize(X[400:]))
for name, col in zip(("ridge", "svr", "tree"), weak.T):
    print(f"{name:6s} RMSE {rmse(col, y[400:]):.3f}")
pred = predict_mos(model, X[400:])
print(f"stack  RMSE {rmse(pred, y[400:]):.3f}  LCC {lcc(pred, y[400:]):.3f}")
