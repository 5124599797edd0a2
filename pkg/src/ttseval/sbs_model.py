"""Antisymmetric bilinear preference model.

    s = z_a^T W z_b - z_b^T W z_a,    p(a preferred over b) = sigmoid(s)

Swapping the clips negates s, so p(a, b) = 1 - p(b, a) holds for any W.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ttseval.errors import DimensionMismatchError, ModelFileError, TrainingDivergedError
from ttseval.features import UtteranceEmbedding
from ttseval.metrics import accuracy, auc_roc
from ttseval.ratings import SbsPair

MODEL_FORMAT = "ttseval-sbs"
MODEL_VERSION = 1


@dataclass
class SbsTrainConfig:
    learning_rate: float = 0.1
    epochs: int = 50
    batch_size: int = 32
    l2_weight: float = 0.0
    seed: int = 0
    init_scale: float = 0.01
    momentum: float = 0.0
    proj_dim: Optional[int] = None  # None: no projection, W acts on the raw embedding

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class SbsModelParams:
    W: np.ndarray
    projection: Optional[np.ndarray] = None
    loss_history: List[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] != self.W.shape[1]:
            raise ValueError("W must be square")
        if self.projection is not None:
            self.projection = np.asarray(self.projection, dtype=np.float64)
            if self.projection.shape[1] != self.W.shape[0]:
                raise ValueError("projection columns must match W")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.d if self.projection is None else self.projection.shape[0]


def _vec(z) -> np.ndarray:
    return z.vector if isinstance(z, UtteranceEmbedding) else np.asarray(z, dtype=np.float64)


def _project(p: SbsModelParams, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != p.input_dim:
        raise DimensionMismatchError(f"embedding dim {x.shape[-1]} != model input dim {p.input_dim}")
    return x if p.projection is None else x @ p.projection


def sigmoid(s):
    s = np.asarray(s, dtype=np.float64)
    e = np.exp(-np.abs(s))
    return np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def score(p: SbsModelParams, z_a, z_b) -> float:
    a, b = _vec(z_a), _vec(z_b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"embedding dims differ: {a.shape} vs {b.shape}")
    a, b = _project(p, a), _project(p, b)
    return float(a @ (p.W @ b) - b @ (p.W @ a))


def score_batch(p: SbsModelParams, za: np.ndarray, zb: np.ndarray) -> np.ndarray:
    a, b = _project(p, za), _project(p, zb)
    return np.einsum("ij,ij->i", a, b @ p.W.T) - np.einsum("ij,ij->i", b, a @ p.W.T)


def predict(p: SbsModelParams, z_a, z_b) -> float:
    return float(sigmoid(score(p, z_a, z_b)))


def predict_batch(p: SbsModelParams, za: np.ndarray, zb: np.ndarray) -> np.ndarray:
    return sigmoid(score_batch(p, za, zb))


def _bce(s: np.ndarray, y: np.ndarray) -> np.ndarray:
    # -[y log sig(s) + (1-y) log(1 - sig(s))] written stably
    return np.logaddexp(0.0, s) - y * s


def loss_and_grad(
    p: SbsModelParams,
    batch: Sequence[Tuple[np.ndarray, np.ndarray, int]] | Tuple[np.ndarray, np.ndarray, np.ndarray],
    l2_weight: float = 0.0,
) -> Tuple[float, np.ndarray, Optional[np.ndarray]]:
    """Mean BCE + l2 * ||W||_F^2 and its exact gradients wrt W and the projection.

    ds/dW = z_a z_b^T - z_b z_a^T; with z = P^T x the projection receives
    x_a (A z_b)^T - x_b (A z_a)^T where A = W - W^T.
    """
    if isinstance(batch, tuple) and len(batch) == 3 and np.ndim(batch[0]) == 2:
        xa, xb, y = (np.asarray(v, dtype=np.float64) for v in batch)
    else:
        if len(batch) == 0:
            raise ValueError("empty batch")
        xa = np.stack([_vec(a) for a, _, _ in batch])
        xb = np.stack([_vec(b) for _, b, _ in batch])
        y = np.array([lab for _, _, lab in batch], dtype=np.float64)
    n = y.size
    if n == 0:
        raise ValueError("empty batch")
    za, zb = _project(p, xa), _project(p, xb)
    s = np.einsum("ij,ij->i", za, zb @ p.W.T) - np.einsum("ij,ij->i", zb, za @ p.W.T)
    bad = np.flatnonzero(~np.isfinite(s))
    if bad.size:
        raise TrainingDivergedError(f"non-finite score at batch index {int(bad[0])}")
    losses = _bce(s, y)
    loss = float(losses.mean()) + l2_weight * float(np.sum(p.W * p.W))
    g = (sigmoid(s) - y) / n  # dL/ds per item
    grad_W = (za * g[:, None]).T @ zb - (zb * g[:, None]).T @ za + 2.0 * l2_weight * p.W
    grad_P = None
    if p.projection is not None:
        A = p.W - p.W.T
        grad_P = (xa * g[:, None]).T @ (zb @ A.T) - (xb * g[:, None]).T @ (za @ A.T)
    if not math.isfinite(loss):
        raise TrainingDivergedError("loss is not finite")
    return loss, grad_W, grad_P


def _stack_pairs(pairs: Sequence[SbsPair], embeddings: Mapping[str, UtteranceEmbedding]):
    missing = sorted({c for pr in pairs for c in (pr.clip_a, pr.clip_b) if c not in embeddings})
    if missing:
        raise KeyError(f"no embedding for clip(s) {missing[:5]}{'...' if len(missing) > 5 else ''}")
    xa = np.stack([embeddings[pr.clip_a].vector for pr in pairs])
    xb = np.stack([embeddings[pr.clip_b].vector for pr in pairs])
    y = np.array([pr.label for pr in pairs], dtype=np.float64)
    return xa, xb, y


def init_params(input_dim: int, cfg: SbsTrainConfig) -> SbsModelParams:
    rng = np.random.default_rng(cfg.seed)
    d = input_dim if cfg.proj_dim is None else cfg.proj_dim
    W = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(d, d))
    P = None
    if cfg.proj_dim is not None:
        P = rng.standard_normal((input_dim, d)) / math.sqrt(input_dim)
    return SbsModelParams(W, P)


def train_sbs(
    pairs: Sequence[SbsPair],
    embeddings: Mapping[str, UtteranceEmbedding],
    cfg: SbsTrainConfig = SbsTrainConfig(),
) -> SbsModelParams:
    """Mini-batch gradient descent on mean BCE; deterministic given cfg.seed."""
    if not pairs:
        raise ValueError("no training pairs")
    xa, xb, y = _stack_pairs(pairs, embeddings)
    params = init_params(xa.shape[1], cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    vel_W = np.zeros_like(params.W)
    vel_P = None if params.projection is None else np.zeros_like(params.projection)
    n = y.size
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, gW, gP = loss_and_grad(params, (xa[idx], xb[idx], y[idx]), cfg.l2_weight)
            vel_W = cfg.momentum * vel_W - cfg.learning_rate * gW
            params.W = params.W + vel_W
            if gP is not None:
                vel_P = cfg.momentum * vel_P - cfg.learning_rate * gP
                params.projection = params.projection + vel_P
        epoch_loss, _, _ = loss_and_grad(params, (xa, xb, y), cfg.l2_weight)
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(f"training loss diverged at epoch {_epoch}")
        params.loss_history.append(epoch_loss)
    return params


def evaluate_sbs(
    p: SbsModelParams, pairs: Sequence[SbsPair], embeddings: Mapping[str, UtteranceEmbedding]
) -> Tuple[float, float]:
    """(accuracy at threshold 0.5, AUC-ROC) over the pairs."""
    xa, xb, y = _stack_pairs(pairs, embeddings)
    probs = predict_batch(p, xa, xb)
    return accuracy(probs, y, 0.5), auc_roc(probs, y)


def save_model(path, p: SbsModelParams, cfg: Optional[SbsTrainConfig] = None, extra: Optional[dict] = None) -> None:
    """JSON container: format tag, version, d, projection flag, row-major W, config echo."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "d": p.d,
        "has_projection": p.projection is not None,
        "W": p.W.ravel().tolist(),
        "projection_shape": None if p.projection is None else list(p.projection.shape),
        "projection": None if p.projection is None else p.projection.ravel().tolist(),
        "config": None if cfg is None else asdict(cfg),
        "loss_history": list(p.loss_history),
        "extra": extra or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_model(path) -> Tuple[SbsModelParams, dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"cannot read SBS model {path}: {exc}") from exc
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFileError(f"{path} is not an SBS model file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFileError(f"{path}: unsupported version {doc.get('version')}")
    d = int(doc["d"])
    W = np.asarray(doc["W"], dtype=np.float64)
    if W.size != d * d:
        raise ModelFileError(f"{path}: W has {W.size} entries, expected {d}x{d}")
    P = None
    if doc["has_projection"]:
        shape = tuple(doc["projection_shape"])
        P = np.asarray(doc["projection"], dtype=np.float64)
        if len(shape) != 2 or shape[1] != d or P.size != shape[0] * shape[1]:
            raise ModelFileError(f"{path}: projection shape {shape} does not match d={d}")
        P = P.reshape(shape)
    params = SbsModelParams(W.reshape(d, d), P, list(doc.get("loss_history", [])))
    return params, doc
