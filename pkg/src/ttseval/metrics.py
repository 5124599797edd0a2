"""Regression, rank and binary-classification metrics for MOS and SBS evaluation."""

from __future__ import annotations

import json
import math
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from ttseval.errors import MetricError


def _paired(pred, target):
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise MetricError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size < 1:
        raise MetricError("empty series")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
        raise MetricError("series contain non-finite values")
    return p, t


def mse(pred, target) -> float:
    p, t = _paired(pred, target)
    d = p - t
    return float(np.mean(d * d))


def rmse(pred, target) -> float:
    return math.sqrt(mse(pred, target))


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise MetricError("correlation undefined for a zero-variance series")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def lcc(pred, target) -> float:
    """Pearson linear correlation coefficient."""
    p, t = _paired(pred, target)
    return _pearson(p, t)


def srcc(pred, target) -> float:
    """Spearman rank correlation with mid-ranks for ties."""
    p, t = _paired(pred, target)
    if p.size < 2:
        raise MetricError("SRCC needs at least two points")
    return _pearson(rankdata(p), rankdata(t))


def _count_inversions(y: np.ndarray) -> int:
    """Strict inversions (i < j, y[i] > y[j]) via bottom-up merge sort."""
    a = list(y)
    n = len(a)
    buf = [0.0] * n
    inv = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[j] < a[i]:
                    buf[k] = a[j]
                    inv += mid - i
                    j += 1
                else:
                    buf[k] = a[i]
                    i += 1
                k += 1
            buf[k:k + mid - i] = a[i:mid]
            k += mid - i
            buf[k:k + hi - j] = a[j:hi]
        a, buf = buf, a
        width *= 2
    return inv


def _tied_pairs(sorted_vals: np.ndarray) -> int:
    _, counts = np.unique(sorted_vals, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def kendall_tau(pred, target) -> float:
    """Kendall tau-b in O(n log n)."""
    p, t = _paired(pred, target)
    n = p.size
    if n < 2:
        raise MetricError("Kendall tau needs at least two points")
    order = np.lexsort((t, p))
    x, y = p[order], t[order]
    n0 = n * (n - 1) // 2
    n1 = _tied_pairs(x)
    # pairs tied in both series
    joint = np.unique(np.stack([x, y]), axis=1, return_counts=True)[1]
    n3 = int(np.sum(joint * (joint - 1) // 2))
    swaps = _count_inversions(y)
    n2 = _tied_pairs(np.sort(y))
    denom = (n0 - n1) * (n0 - n2)
    if denom == 0:
        raise MetricError("Kendall tau undefined when a series is entirely tied")
    num = n0 - n1 - n2 + n3 - 2 * swaps
    return num / math.sqrt(denom)


def _binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise MetricError("scores and labels differ in length")
    if s.size < 1:
        raise MetricError("empty series")
    if not np.all((y == 0) | (y == 1)):
        raise MetricError("labels must be 0 or 1")
    return s, y


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction where (score > threshold) matches the label; ties at the threshold predict 0."""
    s, y = _binary(scores, labels)
    return float(np.mean((s > threshold).astype(np.int64) == y))


def auc_roc(scores, labels) -> float:
    """Mann-Whitney AUC: P(s+ > s-) with half credit for ties."""
    s, y = _binary(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    ranks = rankdata(s)
    u = float(ranks[y == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def group_means(pred, target, groups: Sequence[str]):
    """Collapse item-level series to per-group (e.g. per TTS system) means."""
    p, t = _paired(pred, target)
    keys = sorted(set(groups))
    idx = {k: i for i, k in enumerate(keys)}
    g = np.array([idx[k] for k in groups])
    counts = np.bincount(g, minlength=len(keys))
    return (np.bincount(g, p, len(keys)) / counts, np.bincount(g, t, len(keys)) / counts)


REPORT_KEYS = ("mse", "rmse", "lcc", "srcc", "kendall_tau", "accuracy", "auc_roc", "n")


def regression_report(pred, target, groups: Optional[Sequence[str]] = None) -> Dict[str, Optional[float]]:
    """MOS metrics under the shared report keys.

    Correlations are None when undefined (zero variance); the binary entries
    are always None here.
    """
    if groups is not None:
        pred, target = group_means(pred, target, groups)
    p, t = _paired(pred, target)
    out: Dict[str, Optional[float]] = dict.fromkeys(REPORT_KEYS)
    out.update(n=int(p.size), mse=mse(p, t), rmse=rmse(p, t))
    for name, fn in (("lcc", lcc), ("srcc", srcc), ("kendall_tau", kendall_tau)):
        try:
            out[name] = fn(p, t)
        except MetricError:
            out[name] = None
    return out


def format_report(report: Dict[str, Optional[float]]) -> str:
    """Flat `key = value` block, one line per shared report key present."""
    lines = []
    for k in REPORT_KEYS:
        if k in report:
            v = report[k]
            lines.append(f"{k} = {'nan' if v is None else (v if k == 'n' else f'{v:.6f}')}")
    return "\n".join(lines)


def report_json(report: Dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)
