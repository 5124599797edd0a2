"""Length-sorted batching, padding masks and sequence-level losses for frame regressors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from ttseval.errors import TrainingDivergedError
from ttseval.features import FeatureMatrix


def pad_batch(items: Sequence[FeatureMatrix], pad_value: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """Stack variable-length feature matrices into B x T x D plus their valid lengths."""
    lengths = np.array([f.valid_frames for f in items], dtype=np.int64)
    dim = items[0].dim
    out = np.full((len(items), int(lengths.max()), dim), pad_value, dtype=np.float64)
    for i, f in enumerate(items):
        out[i, : lengths[i]] = f.frames[: lengths[i]]
    return out, lengths


def frame_mask(valid: np.ndarray, t_max: int) -> np.ndarray:
    return np.arange(t_max)[None, :] < np.asarray(valid)[:, None]


def masked_sequence_pool(per_frame_scores: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Mean of each row over its first valid[i] frames; padded values never enter."""
    scores = np.asarray(per_frame_scores, dtype=np.float64)
    valid = np.asarray(valid, dtype=np.int64)
    if np.any(valid < 1):
        raise ValueError("every item needs at least one valid frame")
    mask = frame_mask(valid, scores.shape[1])
    return np.where(mask, scores, 0.0).sum(axis=1) / valid


def sequence_mse(pooled: np.ndarray, targets: np.ndarray) -> float:
    d = np.asarray(pooled, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
    return float(np.mean(d * d))


def length_sorted_batches(lengths: Sequence[float], batch_size: int, seed: int = 0) -> List[np.ndarray]:
    """Partition item indices into batches of similar length.

    Items are sorted by length and chunked consecutively. When batch_size does
    not divide the item count, the short batch is placed at whichever position
    in the sorted order pads least (the shortest end on ties). Only the order
    of batches is shuffled; membership is fixed.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    lengths = np.asarray(lengths)
    n = lengths.size
    order = np.argsort(lengths, kind="stable")
    rem = n % batch_size
    n_full = n // batch_size
    best = None
    for slot in range(n_full + 1 if rem else 1):
        # `slot` full batches, then the short one, then the rest
        sizes = [batch_size] * slot + ([rem] if rem else []) + [batch_size] * (n_full - slot)
        batches = [b for b in np.split(order, np.cumsum(sizes)[:-1]) if b.size]
        cost = padded_frames(lengths, batches)
        if best is None or cost < best[0]:
            best = (cost, batches)
    batches = best[1]
    perm = np.random.default_rng(seed).permutation(len(batches))
    return [batches[i] for i in perm]


def sequential_batches(n: int, batch_size: int) -> List[np.ndarray]:
    idx = np.arange(n)
    return [idx[i:i + batch_size] for i in range(0, n, batch_size)]


def padded_frames(lengths: Sequence[int], batches: Sequence[np.ndarray]) -> int:
    lengths = np.asarray(lengths)
    return int(sum(lengths[b].max() * b.size - lengths[b].sum() for b in batches))


def padding_ratio(lengths: Sequence[int], batches: Sequence[np.ndarray]) -> float:
    """Padded frames divided by real (unpadded) frames."""
    total = float(np.sum(lengths))
    return padded_frames(lengths, batches) / total if total else 0.0


@dataclass
class MaskedFrameRegressor:
    """Linear per-frame scorer whose utterance score is the masked frame mean.

    With loss="sequence" the MSE is taken on pooled utterance scores; with
    loss="frame" every valid frame regresses to its utterance target.
    """

    weights: np.ndarray
    bias: float
    loss: str = "sequence"
    loss_history: List[float] = field(default_factory=list)

    def frame_scores(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights + self.bias

    def predict(self, X: np.ndarray, valid: np.ndarray) -> np.ndarray:
        return masked_sequence_pool(self.frame_scores(X), valid)

    def loss_and_grad(self, X: np.ndarray, valid: np.ndarray, y: np.ndarray):
        mask = frame_mask(valid, X.shape[1]).astype(np.float64)
        scores = self.frame_scores(X)
        if self.loss == "sequence":
            pooled = masked_sequence_pool(scores, valid)
            err = pooled - y
            loss = float(np.mean(err * err))
            # d pooled_i / d score_it = mask_it / valid_i
            d_scores = (2.0 * err / y.size)[:, None] * mask / valid[:, None]
        else:
            err = (scores - y[:, None]) * mask
            loss = float(np.sum(err * err) / mask.sum())
            d_scores = 2.0 * err / mask.sum()
        gw = np.einsum("bt,btd->d", d_scores, X)
        gb = float(d_scores.sum())
        return loss, gw, gb


def train_frame_regressor(
    items: Sequence[FeatureMatrix],
    targets: Sequence[float],
    batch_size: int = 8,
    epochs: int = 100,
    lr: float = 0.05,
    sort_by_length: bool = True,
    loss: str = "sequence",
    seed: int = 0,
) -> MaskedFrameRegressor:
    if loss not in ("sequence", "frame"):
        raise ValueError("loss must be 'sequence' or 'frame'")
    y_all = np.asarray(targets, dtype=np.float64)
    dim = items[0].dim
    model = MaskedFrameRegressor(np.zeros(dim), float(y_all.mean()), loss)
    lengths = [f.valid_frames for f in items]
    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        if sort_by_length:
            batches = length_sorted_batches(lengths, batch_size, seed + epoch)
        else:
            perm = rng.permutation(len(items))
            batches = [perm[b] for b in sequential_batches(len(items), batch_size)]
        total = 0.0
        for b in batches:
            X, valid = pad_batch([items[i] for i in b])
            batch_loss, gw, gb = model.loss_and_grad(X, valid, y_all[b])
            model.weights = model.weights - lr * gw
            model.bias -= lr * gb
            total += batch_loss * b.size
        epoch_loss = total / len(items)
        if not math.isfinite(epoch_loss):
            raise TrainingDivergedError(f"frame regressor diverged at epoch {epoch}")
        model.loss_history.append(epoch_loss)
    return model
