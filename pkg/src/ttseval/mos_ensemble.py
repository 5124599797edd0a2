"""Stacked absolute-MOS regressor.

Concatenated audio + text embeddings feed three weak learners (ridge, linear
epsilon-SVR, CART tree). Their out-of-fold predictions train a small ReLU MLP
that produces the final score.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ttseval.errors import DataError, DimensionMismatchError, ModelFileError, TrainingDivergedError

MODEL_FORMAT = "ttseval-mos-stack"
MODEL_VERSION = 1
MOS_MIN, MOS_MAX = 1.0, 5.0


# --- ridge -------------------------------------------------------------------

@dataclass
class RidgeParams:
    weights: np.ndarray
    bias: float
    lam: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights + self.bias


def fit_ridge(X: np.ndarray, y: np.ndarray, lam: float = 1.0) -> RidgeParams:
    """Closed-form ridge on centered data; the intercept is not penalized."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] < 1:
        raise DataError("ridge needs at least one sample")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    A = Xc.T @ Xc + lam * np.eye(X.shape[1])
    try:
        w = cho_solve(cho_factor(A), Xc.T @ (y - y_mean))
    except LinAlgError as exc:
        raise DataError(f"ridge system is singular (lambda={lam})") from exc
    return RidgeParams(w, y_mean - float(x_mean @ w), lam)


# --- linear epsilon-SVR ------------------------------------------------------

@dataclass
class SvrParams:
    weights: np.ndarray
    bias: float
    epsilon: float
    c: float
    objective_history: List[float] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights + self.bias


def svr_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, epsilon: float, c: float) -> float:
    r = np.abs(X @ w + b - y) - epsilon
    return 0.5 * float(w @ w) + c * float(np.sum(np.maximum(r, 0.0)))


def fit_svr(
    X: np.ndarray,
    y: np.ndarray,
    epsilon: float = 0.1,
    c: float = 1.0,
    epochs: int = 200,
    lr: float = 0.01,
    seed: int = 0,
    batch_size: int = 32,
) -> SvrParams:
    """Minimize 0.5||w||^2 + c * sum(max(0, |w.x + b - y| - eps)) by mini-batch subgradient steps.

    An epoch whose end objective is worse than the previous one is rolled back
    and the step size halved, so the recorded objective never increases.
    """
    if epsilon < 0 or c <= 0:
        raise ValueError("need epsilon >= 0 and c > 0")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    w = np.zeros(d)
    b = float(np.median(y))
    step = lr
    best = svr_objective(w, b, X, y, epsilon, c)
    history = [best]
    for _ in range(epochs):
        w_prev, b_prev = w.copy(), b
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            r = X[idx] @ w + b - y[idx]
            active = np.where(np.abs(r) > epsilon, np.sign(r), 0.0)
            # unbiased subgradient of objective / n
            gw = w / n + c * (active @ X[idx]) / idx.size
            gb = c * float(active.sum()) / idx.size
            w = w - step * gw
            b = b - step * gb
        obj = svr_objective(w, b, X, y, epsilon, c)
        if not math.isfinite(obj):
            raise TrainingDivergedError("SVR objective became non-finite")
        if obj > best:
            w, b = w_prev, b_prev
            step *= 0.5
            obj = best
        best = obj
        history.append(obj)
    return SvrParams(w, b, epsilon, c, history)


# --- CART regression tree ------------------------------------------------------

@dataclass
class TreeParams:
    # preorder node list: (feature, threshold, left, right, value); leaves have feature -1
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int
    min_leaf: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        for i, row in enumerate(X):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if row[self.feature[node]] <= self.threshold[node] else self.right[node]
            out[i] = self.value[node]
        return out

    @property
    def n_nodes(self) -> int:
        return self.feature.size


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    n = y.size
    total = float(y.sum())
    total_sq = float(np.dot(y, y))
    parent_sse = total_sq - total * total / n
    best_gain, best_f, best_t = 0.0, -1, 0.0
    for f in range(X.shape[1]):
        order = np.lexsort((y, X[:, f]))
        xs, ys = X[order, f], y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        # candidate split after position i (left = 0..i), only between distinct x values
        i = np.arange(min_leaf - 1, n - min_leaf)
        i = i[xs[i] < xs[i + 1]]
        if i.size == 0:
            continue
        nl = i + 1.0
        nr = n - nl
        sl, ql = csum[i], csq[i]
        sr, qr = total - sl, total_sq - ql
        sse = (ql - sl * sl / nl) + (qr - sr * sr / nr)
        gain = parent_sse - sse
        k = int(np.argmax(gain))
        # strict improvement: ties keep the lower feature index, argmax keeps the lower threshold
        if gain[k] > best_gain + 1e-12 * max(1.0, abs(parent_sse)):
            best_gain, best_f = float(gain[k]), f
            best_t = 0.5 * (xs[i[k]] + xs[i[k] + 1])
    return best_f, best_t


def fit_tree(X: np.ndarray, y: np.ndarray, max_depth: int = 4, min_leaf: int = 5) -> TreeParams:
    """Greedy CART with SSE-reduction splits at midpoints of sorted unique values."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.size < min_leaf:
        raise DataError(f"tree needs at least min_leaf={min_leaf} samples")
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(rows: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        # leaf value from sorted targets: independent of row order
        value.append(float(np.mean(np.sort(y[rows]))))
        if depth >= max_depth or rows.size < 2 * min_leaf:
            return node
        f, t = _best_split(X[rows], y[rows], min_leaf)
        if f < 0:
            return node
        mask = X[rows, f] <= t
        feature[node], threshold[node] = f, t
        left[node] = grow(rows[mask], depth + 1)
        right[node] = grow(rows[~mask], depth + 1)
        return node

    grow(np.arange(y.size), 0)
    return TreeParams(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                      np.array(value), max_depth, min_leaf)


# --- meta MLP -------------------------------------------------------------------

@dataclass
class MetaMlp:
    W1: np.ndarray  # h x k
    b1: np.ndarray  # h
    W2: np.ndarray  # 1 x h
    b2: float
    loss_history: List[float] = field(default_factory=list)

    @property
    def hidden(self) -> int:
        return self.b1.size

    def forward(self, M: np.ndarray) -> np.ndarray:
        return np.maximum(M @ self.W1.T + self.b1, 0.0) @ self.W2[0] + self.b2


def mlp_loss_and_grad(
    mlp: MetaMlp, M: np.ndarray, y: np.ndarray, dropout_mask: Optional[np.ndarray] = None
) -> Tuple[float, Dict[str, np.ndarray]]:
    """MSE of the 2-layer ReLU MLP and gradients for W1, b1, W2, b2."""
    pre = M @ mlp.W1.T + mlp.b1
    hid = np.maximum(pre, 0.0)
    if dropout_mask is not None:
        hid = hid * dropout_mask
    out = hid @ mlp.W2[0] + mlp.b2
    err = out - y
    n = y.size
    loss = float(np.mean(err * err))
    d_out = 2.0 * err / n
    g_W2 = (d_out @ hid)[None, :]
    g_b2 = np.array(d_out.sum())
    d_hid = np.outer(d_out, mlp.W2[0])
    if dropout_mask is not None:
        d_hid = d_hid * dropout_mask
    d_pre = d_hid * (pre > 0)
    return loss, {"W1": d_pre.T @ M, "b1": d_pre.sum(axis=0), "W2": g_W2, "b2": g_b2}


def init_mlp(n_in: int, hidden: int, y_mean: float, rng: np.random.Generator) -> MetaMlp:
    W1 = rng.uniform(-1, 1, size=(hidden, n_in)) * math.sqrt(6.0 / n_in) / math.sqrt(3.0)
    b1 = np.full(hidden, 0.01)
    W2 = rng.uniform(-1, 1, size=(1, hidden)) * math.sqrt(1.0 / hidden) * 0.1
    return MetaMlp(W1, b1, W2, float(y_mean))


def fit_mlp(
    M: np.ndarray,
    y: np.ndarray,
    hidden: int = 16,
    lr: float = 1e-2,
    epochs: int = 500,
    batch_size: int = 32,
    dropout: float = 0.0,
    seed: int = 0,
) -> MetaMlp:
    rng = np.random.default_rng(seed)
    mlp = init_mlp(M.shape[1], hidden, float(np.mean(y)), rng)
    n = y.size
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            mask = None
            if dropout > 0:
                mask = (rng.random((idx.size, hidden)) >= dropout) / (1.0 - dropout)
            _, g = mlp_loss_and_grad(mlp, M[idx], y[idx], mask)
            mlp.W1 -= lr * g["W1"]
            mlp.b1 -= lr * g["b1"]
            mlp.W2 -= lr * g["W2"]
            mlp.b2 -= lr * float(g["b2"])
        loss, _ = mlp_loss_and_grad(mlp, M, y)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"meta-MLP loss diverged at epoch {epoch}")
        mlp.loss_history.append(loss)
    return mlp


# --- stacking -------------------------------------------------------------------

@dataclass
class StackConfig:
    k_folds: int = 5
    ridge_lambda: float = 1.0
    svr_epsilon: float = 0.1
    svr_c: float = 1.0
    svr_epochs: int = 200
    svr_lr: float = 0.01
    tree_max_depth: int = 4
    tree_min_leaf: int = 5
    mlp_hidden: int = 16
    mlp_lr: float = 1e-2
    mlp_epochs: int = 500
    mlp_batch_size: int = 32
    mlp_dropout: float = 0.0
    append_raw_features: bool = False
    seed: int = 0


@dataclass
class WeakLearnerSet:
    ridge: RidgeParams
    svr: SvrParams
    tree: TreeParams

    def predict(self, X: np.ndarray) -> np.ndarray:
        """N x 3 matrix of (ridge, svr, tree) predictions on standardized X."""
        return np.column_stack([self.ridge.predict(X), self.svr.predict(X), self.tree.predict(X)])


@dataclass
class MosStack:
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    weak: WeakLearnerSet
    meta: MetaMlp
    config: StackConfig
    oof_predictions: Optional[np.ndarray] = None
    fold_of: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.feature_mean.size

    def standardize(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DimensionMismatchError(f"feature dim {X.shape[1]} != trained dim {self.dim}")
        return (X - self.feature_mean) / self.feature_scale


def fit_weak_learners(Xs: np.ndarray, y: np.ndarray, cfg: StackConfig) -> WeakLearnerSet:
    return WeakLearnerSet(
        fit_ridge(Xs, y, cfg.ridge_lambda),
        fit_svr(Xs, y, cfg.svr_epsilon, cfg.svr_c, cfg.svr_epochs, cfg.svr_lr, cfg.seed),
        fit_tree(Xs, y, cfg.tree_max_depth, cfg.tree_min_leaf),
    )


def _meta_input(weak_preds: np.ndarray, Xs: np.ndarray, cfg: StackConfig) -> np.ndarray:
    return np.hstack([weak_preds, Xs]) if cfg.append_raw_features else weak_preds


def fold_assignment(n: int, k: int, seed: int) -> np.ndarray:
    fold = np.empty(n, dtype=np.int64)
    fold[np.random.default_rng(seed).permutation(n)] = np.arange(n) % k
    return fold


def fit_stack(
    features: np.ndarray | Sequence,
    targets: np.ndarray | Mapping[str, float],
    cfg: StackConfig = StackConfig(),
    clip_ids: Optional[Sequence[str]] = None,
) -> MosStack:
    """Out-of-fold stacking: weak learners never predict rows they were fit on.

    `features` is an N x D matrix (or StackedFeature-like objects with
    .vector / .clip_id); `targets` is an array or a clip_id -> MOS map.
    """
    if not isinstance(features, np.ndarray):
        clip_ids = [f.clip_id for f in features]
        features = np.stack([f.vector for f in features])
    X = np.asarray(features, dtype=np.float64)
    if isinstance(targets, Mapping):
        missing = [c for c in clip_ids if c not in targets]
        if missing:
            raise DataError(f"no target for clip(s) {missing[:5]}")
        y = np.array([targets[c] for c in clip_ids], dtype=np.float64)
    else:
        y = np.asarray(targets, dtype=np.float64)
    n = y.size
    if cfg.k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    fold = fold_assignment(n, cfg.k_folds, cfg.seed)
    if np.bincount(fold, minlength=cfg.k_folds).min() < 2:
        raise DataError(f"{n} samples leave a fold with fewer than 2 samples for k={cfg.k_folds}")

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Xs = (X - mean) / scale

    oof = np.empty((n, 3))
    for k in range(cfg.k_folds):
        held = fold == k
        # tree min_leaf may exceed a small training fold
        fold_cfg = cfg
        if (~held).sum() < cfg.tree_min_leaf:
            fold_cfg = StackConfig(**{**asdict(cfg), "tree_min_leaf": int((~held).sum())})
        weak = fit_weak_learners(Xs[~held], y[~held], fold_cfg)
        oof[held] = weak.predict(Xs[held])
    meta = fit_mlp(_meta_input(oof, Xs, cfg), y, cfg.mlp_hidden, cfg.mlp_lr, cfg.mlp_epochs,
                   cfg.mlp_batch_size, cfg.mlp_dropout, cfg.seed)
    final = fit_weak_learners(Xs, y, cfg)
    return MosStack(mean, scale, final, meta, cfg, oof, fold)


def predict_mos(model: MosStack, features) -> np.ndarray | float:
    """Meta-MLP over the three weak predictions, clamped to [1, 5]."""
    single = np.ndim(getattr(features, "vector", features)) == 1
    X = getattr(features, "vector", features)
    Xs = model.standardize(X)
    out = model.meta.forward(_meta_input(model.weak.predict(Xs), Xs, model.config))
    out = np.clip(out, MOS_MIN, MOS_MAX)
    return float(out[0]) if single else out


# --- serialization ------------------------------------------------------------------

def _arr(a) -> list:
    return np.asarray(a, dtype=np.float64).ravel().tolist()


def save_stack(path, model: MosStack, extra: Optional[dict] = None) -> None:
    t = model.weak.tree
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "dim": model.dim,
        "feature_mean": _arr(model.feature_mean),
        "feature_scale": _arr(model.feature_scale),
        "ridge": {"weights": _arr(model.weak.ridge.weights), "bias": model.weak.ridge.bias, "lambda": model.weak.ridge.lam},
        "svr": {"weights": _arr(model.weak.svr.weights), "bias": model.weak.svr.bias,
                "epsilon": model.weak.svr.epsilon, "c": model.weak.svr.c},
        "tree": {
            "max_depth": t.max_depth, "min_leaf": t.min_leaf,
            "nodes": [[int(t.feature[i]), float(t.threshold[i]), int(t.left[i]), int(t.right[i]), float(t.value[i])]
                      for i in range(t.n_nodes)],
        },
        "meta": {"hidden": model.meta.hidden, "W1": _arr(model.meta.W1), "b1": _arr(model.meta.b1),
                 "W2": _arr(model.meta.W2), "b2": model.meta.b2},
        "config": asdict(model.config),
        "extra": extra or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_stack(path) -> Tuple[MosStack, dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"cannot read MOS model {path}: {exc}") from exc
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ModelFileError(f"{path} is not a version-{MODEL_VERSION} MOS stack file")
    try:
        d = int(doc["dim"])
        cfg = StackConfig(**doc["config"])
        nodes = np.array(doc["tree"]["nodes"], dtype=np.float64).reshape(-1, 5)
        tree = TreeParams(nodes[:, 0].astype(np.int64), nodes[:, 1], nodes[:, 2].astype(np.int64),
                          nodes[:, 3].astype(np.int64), nodes[:, 4],
                          int(doc["tree"]["max_depth"]), int(doc["tree"]["min_leaf"]))
        r, s, m = doc["ridge"], doc["svr"], doc["meta"]
        h = int(m["hidden"])
        k = 3 + (d if cfg.append_raw_features else 0)
        weak = WeakLearnerSet(
            RidgeParams(np.array(r["weights"]), float(r["bias"]), float(r["lambda"])),
            SvrParams(np.array(s["weights"]), float(s["bias"]), float(s["epsilon"]), float(s["c"])),
            tree,
        )
        meta = MetaMlp(np.array(m["W1"]).reshape(h, k), np.array(m["b1"]), np.array(m["W2"]).reshape(1, h),
                       float(m["b2"]))
        model = MosStack(np.array(doc["feature_mean"]), np.array(doc["feature_scale"]), weak, meta, cfg)
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFileError(f"{path}: malformed MOS model ({exc})") from exc
    if weak.ridge.weights.size != d or weak.svr.weights.size != d or model.feature_scale.size != d:
        raise ModelFileError(f"{path}: learner dimensions do not match header dim {d}")
    return model, doc
