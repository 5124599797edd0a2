"""Rating ingestion, per-rater standardization, SBS pair generation and text-disjoint splits."""

from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from ttseval.errors import DataError, InsufficientPairsError

SIGMA_FLOOR = 0.25
MAX_ENUMERATED_PAIRS = 2_000_000


@dataclass(frozen=True)
class RatingRecord:
    rater_id: str
    clip_id: str
    system_id: str
    score: float


@dataclass(frozen=True)
class RaterStats:
    rater_id: str
    mu: float
    sigma: float
    count: int


@dataclass(frozen=True)
class StdRatingRecord:
    rater_id: str
    clip_id: str
    system_id: str
    score: float
    z: float
    std_score: float


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    text_id: str
    transcript: str = ""
    audio_path: str = ""


@dataclass(frozen=True)
class SbsPair:
    clip_a: str
    clip_b: str
    label: int
    margin: float
    text_id: str = ""

    def swapped(self) -> "SbsPair":
        return SbsPair(self.clip_b, self.clip_a, 1 - self.label, self.margin, self.text_id)


@dataclass(frozen=True)
class SplitManifest:
    train_text_ids: frozenset
    test_text_ids: frozenset
    fraction: float

    def split_of(self, text_id: str) -> str:
        return "train" if text_id in self.train_text_ids else "test"


def rater_stats(records: Sequence[RatingRecord]) -> Dict[str, RaterStats]:
    """Per-rater mean and population standard deviation."""
    if not records:
        raise DataError("no rating records")
    by_rater: Dict[str, List[float]] = defaultdict(list)
    for r in records:
        by_rater[r.rater_id].append(r.score)
    out = {}
    for rater, scores in by_rater.items():
        s = np.asarray(scores, dtype=np.float64)
        out[rater] = RaterStats(rater, float(s.mean()), float(s.std()), s.size)
    return out


def standardize(
    records: Sequence[RatingRecord],
    stats: Optional[Mapping[str, RaterStats]] = None,
    sigma_floor: float = SIGMA_FLOOR,
) -> List[StdRatingRecord]:
    """z-score each rating within its rater, then map all z globally onto [1, 5]."""
    if stats is None:
        stats = rater_stats(records)
    z = np.empty(len(records))
    for i, r in enumerate(records):
        try:
            st = stats[r.rater_id]
        except KeyError:
            raise DataError(f"rater {r.rater_id!r} missing from stats") from None
        z[i] = (r.score - st.mu) / max(st.sigma, sigma_floor)
    lo, hi = (float(z.min()), float(z.max())) if z.size else (0.0, 0.0)
    if hi == lo:
        std = np.full_like(z, 3.0)
    else:
        std = 1.0 + 4.0 * (z - lo) / (hi - lo)
    return [
        StdRatingRecord(r.rater_id, r.clip_id, r.system_id, r.score, float(zi), float(si))
        for r, zi, si in zip(records, z, std)
    ]


def clip_mos(records: Iterable, use_std: bool = False) -> Dict[str, float]:
    """Mean score per clip, from raw scores or (use_std) the standardized targets."""
    acc: Dict[str, List[float]] = defaultdict(list)
    for r in records:
        acc[r.clip_id].append(r.std_score if use_std else r.score)
    return {cid: float(np.mean(v)) for cid, v in acc.items()}


def inter_rater_rmse(records: Iterable, use_std: bool = False) -> float:
    """RMSE of each rating against the leave-one-out mean of the same clip's other ratings."""
    by_clip: Dict[str, List[float]] = defaultdict(list)
    for r in records:
        by_clip[r.clip_id].append(r.std_score if use_std else r.score)
    sq = 0.0
    n = 0
    for scores in by_clip.values():
        if len(scores) < 2:
            continue
        s = np.asarray(scores, dtype=np.float64)
        loo = (s.sum() - s) / (s.size - 1)
        sq += float(np.sum((s - loo) ** 2))
        n += s.size
    if n == 0:
        raise DataError("no clip has two or more ratings")
    return math.sqrt(sq / n)


def split_by_text(manifest: Sequence[ManifestEntry], fraction: float = 0.7, seed: int = 0) -> SplitManifest:
    """Shuffle distinct text ids and send the first ceil(fraction * N) to train."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    texts = sorted({e.text_id for e in manifest})
    if len(texts) < 2:
        raise DataError("need at least two distinct text ids to split")
    order = np.random.default_rng(seed).permutation(len(texts))
    # round before ceil: 0.7 * 10 is 7.000000000000001 in floating point
    n_train = math.ceil(round(fraction * len(texts), 9))
    n_train = min(max(n_train, 1), len(texts) - 1)
    shuffled = [texts[i] for i in order]
    return SplitManifest(frozenset(shuffled[:n_train]), frozenset(shuffled[n_train:]), fraction)


def _candidate_pairs(clips: Sequence[str], texts: Mapping[str, str], same_text_only: bool):
    if same_text_only:
        groups: Dict[str, List[str]] = defaultdict(list)
        for c in clips:
            groups[texts[c]].append(c)
        cands = [pair for t in sorted(groups) for pair in combinations(groups[t], 2)]
        if cands:
            return cands
    # no text has two clips (or unrestricted requested)
    return list(combinations(clips, 2))


def generate_pairs(
    mos: Mapping[str, float],
    manifest: Sequence[ManifestEntry],
    n_pairs: int,
    min_margin: float = 0.0,
    same_text_only: bool = True,
    seed: int = 0,
) -> List[SbsPair]:
    """Sample unordered clip pairs without replacement and label them by MOS order.

    Pairs with |dMOS| <= min_margin (and all ties) are never emitted. The (a, b)
    order is randomized so labels come out roughly balanced.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if min_margin < 0:
        raise ValueError("min_margin must be >= 0")
    texts = {e.clip_id: e.text_id for e in manifest}
    rng = np.random.default_rng(seed)
    clips = sorted(c for c in texts if c in mos)
    n_all = len(clips) * (len(clips) - 1) // 2
    if not same_text_only and n_all > MAX_ENUMERATED_PAIRS:
        picked = _rejection_sample(clips, mos, n_pairs, min_margin, rng)
    else:
        eligible = eligible_pairs(mos, manifest, min_margin, same_text_only)
        if len(eligible) < n_pairs:
            raise InsufficientPairsError(f"requested {n_pairs} pairs but only {len(eligible)} are eligible")
        picked = [eligible[i] for i in rng.choice(len(eligible), size=n_pairs, replace=False)]
    flips = rng.random(n_pairs) < 0.5
    out = []
    for (a, b), flip in zip(picked, flips):
        if flip:
            a, b = b, a
        delta = mos[a] - mos[b]
        text = texts[a] if texts[a] == texts[b] else ""
        out.append(SbsPair(a, b, int(delta > 0), abs(delta), text))
    return out


def _rejection_sample(clips, mos, n_pairs, min_margin, rng) -> List[tuple]:
    seen = set()
    picked = []
    budget = 50 * n_pairs
    while len(picked) < n_pairs and budget > 0:
        budget -= 1
        i, j = rng.choice(len(clips), size=2, replace=False)
        key = (clips[min(i, j)], clips[max(i, j)])
        if key in seen:
            continue
        seen.add(key)
        if abs(mos[key[0]] - mos[key[1]]) > min_margin and mos[key[0]] != mos[key[1]]:
            picked.append(key)
    if len(picked) < n_pairs:
        raise InsufficientPairsError(f"found only {len(picked)} of {n_pairs} eligible pairs by sampling")
    return picked


def eligible_pairs(
    mos: Mapping[str, float],
    manifest: Sequence[ManifestEntry],
    min_margin: float = 0.0,
    same_text_only: bool = True,
) -> List[tuple]:
    clips = sorted(e.clip_id for e in manifest if e.clip_id in mos)
    texts = {e.clip_id: e.text_id for e in manifest}
    return [
        (a, b)
        for a, b in _candidate_pairs(clips, texts, same_text_only)
        if abs(mos[a] - mos[b]) > min_margin and mos[a] != mos[b]
    ]


# --- CSV formats -----------------------------------------------------------

RATINGS_HEADER = ["rater_id", "clip_id", "system_id", "score"]
MANIFEST_HEADER = ["clip_id", "text_id", "transcript", "audio_path"]
PAIRS_HEADER = ["clip_a", "clip_b", "label", "margin", "text_id"]


def _read_csv(path, required: Sequence[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        for row in reader:
            yield reader.line_num, row


def read_ratings(path: str | os.PathLike) -> List[RatingRecord]:
    records = []
    seen = set()
    for lineno, row in _read_csv(path, RATINGS_HEADER):
        try:
            score = float(row["score"])
        except (TypeError, ValueError):
            raise DataError(f"{path}:{lineno}: score {row['score']!r} is not a number") from None
        if not 1.0 <= score <= 5.0:
            raise DataError(f"{path}:{lineno}: score {score} outside [1, 5]")
        key = (row["rater_id"], row["clip_id"])
        if key in seen:
            raise DataError(f"{path}:{lineno}: duplicate rating by {key[0]} for {key[1]}")
        seen.add(key)
        records.append(RatingRecord(row["rater_id"], row["clip_id"], row["system_id"], score))
    if not records:
        raise DataError(f"{path}: no ratings")
    return records


def write_ratings(path, records: Iterable[RatingRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RATINGS_HEADER)
        for r in records:
            w.writerow([r.rater_id, r.clip_id, r.system_id, repr(r.score)])


def write_std_ratings(path, records: Iterable[StdRatingRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RATINGS_HEADER + ["z", "std_score"])
        for r in records:
            w.writerow([r.rater_id, r.clip_id, r.system_id, repr(r.score), repr(r.z), repr(r.std_score)])


def read_manifest(path: str | os.PathLike) -> List[ManifestEntry]:
    entries = []
    for lineno, row in _read_csv(path, ["clip_id", "text_id"]):
        if not row["clip_id"]:
            raise DataError(f"{path}:{lineno}: empty clip_id")
        entries.append(ManifestEntry(row["clip_id"], row["text_id"], row.get("transcript") or "",
                                     row.get("audio_path") or ""))
    if not entries:
        raise DataError(f"{path}: empty manifest")
    return entries


def write_manifest(path, entries: Iterable[ManifestEntry]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_HEADER)
        for e in entries:
            w.writerow([e.clip_id, e.text_id, e.transcript, e.audio_path])


def write_pairs(path, pairs: Iterable[SbsPair]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PAIRS_HEADER)
        for p in pairs:
            w.writerow([p.clip_a, p.clip_b, p.label, repr(p.margin), p.text_id])


def read_pairs(path) -> List[SbsPair]:
    return [
        SbsPair(r["clip_a"], r["clip_b"], int(r["label"]), float(r["margin"]), r.get("text_id") or "")
        for _, r in _read_csv(path, PAIRS_HEADER[:4])
    ]


def write_split(path, split: SplitManifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("text_id,split\n")
        for t in sorted(split.train_text_ids):
            fh.write(f"{t},train\n")
        for t in sorted(split.test_text_ids):
            fh.write(f"{t},test\n")


def read_split(path) -> SplitManifest:
    train, test = set(), set()
    for lineno, row in _read_csv(path, ["text_id", "split"]):
        if row["split"] == "train":
            train.add(row["text_id"])
        elif row["split"] == "test":
            test.add(row["text_id"])
        else:
            raise DataError(f"{path}:{lineno}: split must be train or test")
    n = len(train) + len(test)
    return SplitManifest(frozenset(train), frozenset(test), len(train) / n if n else 0.0)
