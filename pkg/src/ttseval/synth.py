"""Synthetic signals, rater panels and toy corpora with known ground truth."""

from __future__ import annotations

import os
from typing import Dict, List, Tuple

import numpy as np
from scipy.signal import butter, sosfilt

from ttseval.audio_io import Waveform, save_wav
from ttseval.ratings import ManifestEntry, RatingRecord, write_manifest, write_ratings

_WORDS = ("the quick brown fox jumps over a lazy dog while seven bright "
          "voices read short news about rain trains and green music").split()


def tone(freq_hz: float, duration_s: float = 1.0, sample_rate: int = 16000, amp: float = 0.5) -> Waveform:
    t = np.arange(int(round(duration_s * sample_rate))) / sample_rate
    return Waveform(amp * np.sin(2 * np.pi * freq_hz * t), sample_rate)


def speech_like(duration_s: float = 1.5, sample_rate: int = 16000, seed: int = 0, clip_id: str = "") -> Waveform:
    """Noise through three random formant bands, gated by a ~4 Hz syllable envelope."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    src = rng.standard_normal(n)
    out = np.zeros(n)
    centers = (rng.uniform(300, 900), rng.uniform(1000, 2200), rng.uniform(2400, 3600))
    for k, fc in enumerate(centers):
        bw = fc * 0.25
        sos = butter(2, [fc - bw / 2, fc + bw / 2], btype="bandpass", fs=sample_rate, output="sos")
        out += sosfilt(sos, src) * (1.0 / (k + 1))
    t = np.arange(n) / sample_rate
    rate = rng.uniform(3.0, 5.0)
    env = np.clip(np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)), 0.0, None) ** 0.7
    out *= env
    out *= 0.5 / np.max(np.abs(out))
    return Waveform(out, sample_rate, clip_id or None)


def random_transcript(rng: np.random.Generator, n_words: int = 6) -> str:
    return " ".join(rng.choice(_WORDS, size=n_words))


def simulate_panel(
    n_raters: int = 20,
    n_clips: int = 200,
    ratings_per_clip: int = 8,
    seed: int = 0,
    noise_sd: float = 0.4,
) -> Tuple[List[RatingRecord], Dict[str, float]]:
    """Raters with offsets in [-1, 1] and scale factors in [0.5, 1.5] over latent clip quality.

    Rating = clip(round(3 + scale_r * (q_i - 3) + offset_r + noise), 1, 5), q_i ~ U(1.5, 4.5).
    """
    rng = np.random.default_rng(seed)
    latent = {f"clip{i:04d}": float(rng.uniform(1.5, 4.5)) for i in range(n_clips)}
    offsets = rng.uniform(-1.0, 1.0, n_raters)
    scales = rng.uniform(0.5, 1.5, n_raters)
    records = []
    for i, (cid, q) in enumerate(latent.items()):
        raters = rng.choice(n_raters, size=min(ratings_per_clip, n_raters), replace=False)
        for r in sorted(raters):
            raw = 3.0 + scales[r] * (q - 3.0) + offsets[r] + rng.normal(0, noise_sd)
            score = float(np.clip(np.round(raw), 1, 5))
            records.append(RatingRecord(f"r{r:02d}", cid, f"sys{i % 10}", score))
    return records, latent


def clean_vs_degraded_corpus(
    out_dir: str,
    n_texts: int = 100,
    seed: int = 0,
    snr_db: float = 10.0,
    n_gaps: int = 3,
    gap_ms: float = 20.0,
    duration_s: float = 1.2,
    n_raters: int = 4,
) -> Tuple[str, str]:
    """Write WAVs, manifest.csv and ratings.csv for a clean/degraded pairing task.

    Each text id gets one clean utterance and its degraded copy (white noise at
    `snr_db` plus `n_gaps` micro-gaps). Clean clips are rated 4-5, degraded 1-2.
    Returns (manifest_path, ratings_path).
    """
    from ttseval.augment import AugmentSpec, apply_pipeline, derive_seed

    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries, records = [], []
    for t in range(n_texts):
        text_id = f"t{t:03d}"
        transcript = random_transcript(rng)
        clean = speech_like(duration_s, seed=seed * 100003 + t, clip_id=f"{text_id}_clean")
        cs = derive_seed(seed, text_id)
        bad = apply_pipeline(clean, [AugmentSpec("white_noise", {"snr_db": snr_db}, cs),
                                     AugmentSpec("micro_gap", {"n_gaps": n_gaps, "gap_ms": gap_ms}, cs + 1)])
        for kind, w, lo in (("clean", clean, 4), ("degraded", bad, 1)):
            cid = f"{text_id}_{kind}"
            path = f"{cid}.wav"
            save_wav(w, os.path.join(out_dir, path))
            entries.append(ManifestEntry(cid, text_id, transcript, path))
            for r in range(n_raters):
                records.append(RatingRecord(f"r{r}", cid, kind, float(lo + rng.integers(0, 2))))
    manifest = os.path.join(out_dir, "manifest.csv")
    ratings = os.path.join(out_dir, "ratings.csv")
    write_manifest(manifest, entries)
    write_ratings(ratings, records)
    return manifest, ratings


def snr_graded_corpus(
    out_dir: str,
    n_texts: int = 60,
    clips_per_text: int = 4,
    seed: int = 0,
    n_raters: int = 6,
    duration_s: float = 1.0,
    snr_range: Tuple[float, float] = (0.0, 40.0),
) -> Tuple[str, str, Dict[str, float]]:
    """Corpus whose true MOS is a monotone function of injected white-noise SNR.

    true MOS = 1 + 4 * (snr - lo) / (hi - lo); raters add N(0, 0.3) noise and round
    to half points. Returns (manifest_path, ratings_path, true_mos).
    """
    from ttseval.augment import add_white_noise

    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    lo, hi = snr_range
    entries, records, truth = [], [], {}
    for t in range(n_texts):
        text_id = f"t{t:03d}"
        transcript = random_transcript(rng)
        for k in range(clips_per_text):
            cid = f"{text_id}_c{k}"
            snr = float(rng.uniform(lo, hi))
            w = speech_like(duration_s, seed=seed * 7919 + t * 31 + k, clip_id=cid)
            w = add_white_noise(w, snr, seed=int(rng.integers(1 << 31)))
            path = f"{cid}.wav"
            save_wav(w, os.path.join(out_dir, path))
            entries.append(ManifestEntry(cid, text_id, transcript, path))
            mos = 1.0 + 4.0 * (snr - lo) / (hi - lo)
            truth[cid] = mos
            for r in range(n_raters):
                s = float(np.clip(np.round(2 * (mos + rng.normal(0, 0.3))) / 2, 1, 5))
                records.append(RatingRecord(f"r{r}", cid, f"sys{k}", s))
    manifest = os.path.join(out_dir, "manifest.csv")
    ratings = os.path.join(out_dir, "ratings.csv")
    write_manifest(manifest, entries)
    write_ratings(ratings, records)
    return manifest, ratings, truth
