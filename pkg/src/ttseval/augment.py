"""Two-stage audio degradation pipeline.

Stage 1 works on the raw signal (noise, dropouts, EQ). Stage 2 applies
phonetically motivated edits (segment duration, reverberation, pitch,
voiced/voiceless consonant swaps). Every op is deterministic given its seed.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import fftconvolve

from ttseval.audio_io import Waveform, load_wav, resample_to_length
from ttseval.errors import AlignmentError, AugmentError, StageOrderError

STAGE1_OPS = ("white_noise", "pink_noise", "micro_gap", "freq_response")
STAGE2_OPS = ("time_stretch", "rir_convolve", "pitch_shift", "consonant_swap")

WSOLA_FRAME = 512
WSOLA_TOLERANCE = 128
FADE_MS = 1.0
EQ_NFFT = 1024
EQ_HOP = EQ_NFFT // 4

# voiced <-> voiceless consonant pairs (ARPAbet-style lowercase labels)
VOICING_PAIRS = {
    "b": "p", "d": "t", "g": "k", "v": "f", "z": "s",
    "zh": "sh", "dh": "th", "jh": "ch",
}
VOICING_PAIRS.update({v: k for k, v in list(VOICING_PAIRS.items())})


@dataclass
class AugmentSpec:
    op: str
    params: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.op not in STAGE1_OPS + STAGE2_OPS:
            raise AugmentError(f"unknown augmentation op {self.op!r}")

    @property
    def stage(self) -> int:
        return 1 if self.op in STAGE1_OPS else 2

    def to_dict(self) -> dict:
        return {"op": self.op, "params": self.params, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AugmentSpec":
        return cls(d["op"], dict(d.get("params", {})), int(d.get("seed", 0)))


@dataclass
class AlignmentTrack:
    clip_id: str
    segments: List[Tuple[str, float, float]]

    def validate(self, duration_s: Optional[float] = None) -> None:
        prev_end = 0.0
        for label, start, end in self.segments:
            if not 0.0 <= start < end:
                raise AlignmentError(f"{self.clip_id}: bad segment {label!r} [{start}, {end})")
            if start < prev_end - 1e-9:
                raise AlignmentError(f"{self.clip_id}: segment {label!r} overlaps or is out of order")
            if duration_s is not None and end > duration_s + 1e-6:
                raise AlignmentError(f"{self.clip_id}: segment {label!r} ends after the clip ({end} > {duration_s})")
            prev_end = end


def derive_seed(global_seed: int, clip_id: str) -> int:
    """Per-clip seed independent of processing order."""
    digest = hashlib.sha256(f"{global_seed}:{clip_id}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _signal_power(x: np.ndarray) -> float:
    return float(np.mean(x * x))


def _scale_to_snr(x: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    p_sig = _signal_power(x)
    if p_sig == 0.0:
        raise AugmentError("signal has zero power; SNR is undefined")
    if not math.isfinite(snr_db):
        raise AugmentError("snr_db must be finite")
    target = p_sig / 10.0 ** (snr_db / 10.0)
    return noise * math.sqrt(target / _signal_power(noise))


def add_white_noise(w: Waveform, snr_db: float, seed: int = 0) -> Waveform:
    rng = np.random.default_rng(seed)
    noise = _scale_to_snr(w.samples, rng.standard_normal(len(w)), snr_db)
    return w.with_samples(np.clip(w.samples + noise, -1.0, 1.0))


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """1/f noise: white spectrum shaped by f^-1/2, DC removed."""
    spec = np.fft.rfft(rng.standard_normal(n))
    k = np.arange(spec.size, dtype=np.float64)
    gain = np.zeros_like(k)
    gain[1:] = 1.0 / np.sqrt(k[1:])
    return np.fft.irfft(spec * gain, n=n)


def add_pink_noise(w: Waveform, snr_db: float, seed: int = 0) -> Waveform:
    rng = np.random.default_rng(seed)
    noise = _scale_to_snr(w.samples, pink_noise(len(w), rng), snr_db)
    return w.with_samples(np.clip(w.samples + noise, -1.0, 1.0))


def insert_micro_gaps(w: Waveform, n_gaps: int, gap_ms: float, seed: int = 0) -> Waveform:
    """Zero `n_gaps` random non-overlapping spans, each with 1 ms linear fades outside it."""
    if n_gaps < 1:
        raise AugmentError("n_gaps must be >= 1")
    if not 1.0 <= gap_ms <= 100.0:
        raise AugmentError("gap_ms must be in [1, 100]")
    gap = int(round(gap_ms * w.sample_rate_hz / 1000.0))
    fade = max(1, int(round(FADE_MS * w.sample_rate_hz / 1000.0)))
    footprint = gap + 2 * fade
    slack = len(w) - n_gaps * footprint
    if slack < 0:
        raise AugmentError(f"clip of {len(w)} samples cannot host {n_gaps} gaps of {gap_ms} ms")
    rng = np.random.default_rng(seed)
    # sorted offsets in the slack space, then spread by footprint => no overlap
    offsets = np.sort(rng.integers(0, slack + 1, size=n_gaps))
    starts = offsets + np.arange(n_gaps) * footprint

    ramp = 1.0 - np.arange(1, fade + 1) / (fade + 1)
    gain = np.ones(len(w))
    for s in starts:
        gain[s:s + fade] = ramp
        gain[s + fade:s + fade + gap] = 0.0
        gain[s + fade + gap:s + footprint] = ramp[::-1]
    return w.with_samples(w.samples * gain)


def gain_curve_db(freqs_hz: np.ndarray, bands: Sequence[Tuple[float, float]]) -> np.ndarray:
    """Piecewise-linear gain over log-frequency through the band anchors.

    The curve returns to 0 dB one octave outside the extreme anchors and stays
    flat there, so a single band acts as a local boost/cut.
    """
    anchors = sorted((float(f), float(g)) for f, g in bands)
    f = np.array([anchors[0][0] / 2] + [a[0] for a in anchors] + [anchors[-1][0] * 2])
    g = np.array([0.0] + [a[1] for a in anchors] + [0.0])
    logf = np.log2(np.maximum(freqs_hz, 1e-3))
    return np.interp(logf, np.log2(f), g)


def shape_freq_response(w: Waveform, bands: Sequence[Tuple[float, float]]) -> Waveform:
    if not 1 <= len(bands) <= 16:
        raise AugmentError("need between 1 and 16 bands")
    for center, gain in bands:
        if not -24.0 <= gain <= 24.0:
            raise AugmentError(f"band gain {gain} dB outside [-24, 24]")
        if not 0.0 < center < w.sample_rate_hz / 2:
            raise AugmentError(f"band center {center} Hz outside (0, Nyquist)")
    freqs = np.fft.rfftfreq(EQ_NFFT, 1.0 / w.sample_rate_hz)
    gain = 10.0 ** (gain_curve_db(freqs, bands) / 20.0)

    n = len(w)
    pad = EQ_NFFT
    n_frames = -(-(n + pad) // EQ_HOP) + 1
    total = pad + n_frames * EQ_HOP + EQ_NFFT
    x = np.zeros(total)
    x[pad:pad + n] = w.samples
    window = np.hanning(EQ_NFFT + 1)[:-1]
    out = np.zeros(total)
    norm = np.zeros(total)
    for k in range(n_frames):
        s = k * EQ_HOP
        frame = np.fft.irfft(np.fft.rfft(x[s:s + EQ_NFFT] * window) * gain, n=EQ_NFFT)
        out[s:s + EQ_NFFT] += frame * window
        norm[s:s + EQ_NFFT] += window * window
    y = out[pad:pad + n] / norm[pad:pad + n]
    return w.with_samples(np.clip(y, -1.0, 1.0))


def _wsola(x: np.ndarray, rate: float, frame: int = WSOLA_FRAME, tol: int = WSOLA_TOLERANCE) -> np.ndarray:
    """Waveform-similarity overlap-add; output length round(len(x) / rate)."""
    n_out = max(1, int(round(x.size / rate)))
    hs = frame // 2
    ha = hs * rate
    n_frames = -(-(n_out + hs) // hs) + 1
    left = frame + tol
    need = left + int(math.ceil((n_frames + 1) * ha)) + 2 * frame + 2 * tol
    xp = np.zeros(max(need, left + x.size + frame))
    xp[left:left + x.size] = x
    window = np.hanning(frame + 1)[:-1]
    buf = np.zeros(n_frames * hs + frame)
    wsum = np.zeros_like(buf)

    prev = None
    for k in range(n_frames):
        nominal = left + int(round((k - 1) * ha))
        if prev is None:
            start = nominal
        else:
            template = xp[prev + hs:prev + hs + frame]
            region = xp[nominal - tol:nominal + tol + frame]
            corr = np.correlate(region, template, mode="valid")
            best = int(np.argmax(corr))
            if corr[best] <= corr[tol]:
                best = tol
            start = nominal - tol + best
        buf[k * hs:k * hs + frame] += xp[start:start + frame] * window
        wsum[k * hs:k * hs + frame] += window
        prev = start
    y = buf[hs:hs + n_out]
    ws = wsum[hs:hs + n_out]
    return np.where(ws > 1e-8, y / np.maximum(ws, 1e-8), 0.0)


def time_stretch(w: Waveform, rate: float, segments: Optional[AlignmentTrack] = None) -> Waveform:
    """Change duration by 1/rate without changing pitch.

    With an alignment track only the listed segments are stretched; the audio
    between them is copied unchanged.
    """
    if not 0.5 <= rate <= 2.0:
        raise AugmentError("rate must be in [0.5, 2.0]")
    if rate == 1.0 and segments is None:
        return w.with_samples(w.samples.copy())
    if segments is None:
        y = _wsola(w.samples, rate)
    else:
        segments.validate(w.duration_s)
        pieces = []
        cursor = 0
        for _label, start_s, end_s in segments.segments:
            a = int(round(start_s * w.sample_rate_hz))
            b = min(len(w), int(round(end_s * w.sample_rate_hz)))
            pieces.append(w.samples[cursor:a])
            if b > a:
                pieces.append(_wsola(w.samples[a:b], rate))
            cursor = max(cursor, b)
        pieces.append(w.samples[cursor:])
        y = np.concatenate(pieces)
    return w.with_samples(np.clip(y, -1.0, 1.0))


def exponential_rir(rt60_s: float, length_s: float, sample_rate: int, seed: int = 0) -> Waveform:
    """Synthetic RIR: unit direct path plus noise decaying 60 dB over rt60_s."""
    n = max(1, int(round(length_s * sample_rate)))
    rng = np.random.default_rng(seed)
    t = np.arange(n) / sample_rate
    tail = rng.standard_normal(n) * np.exp(-6.9078 * t / rt60_s) * 0.3
    tail[0] = 1.0
    return Waveform(tail / np.max(np.abs(tail)), sample_rate, "rir")


def rir_convolve(w: Waveform, rir: Waveform) -> Waveform:
    """FFT convolution truncated to the input length and peak-normalized to the dry peak."""
    if rir is None or len(rir) == 0 or not np.any(rir.samples):
        raise AugmentError("empty room impulse response")
    if rir.duration_s > 1.0:
        raise AugmentError("RIR longer than 1 s")
    wet = fftconvolve(w.samples, rir.samples)[: len(w)]
    peak_wet = np.max(np.abs(wet))
    peak_dry = np.max(np.abs(w.samples))
    if peak_wet > 0:
        wet = wet * (peak_dry / peak_wet)
    return w.with_samples(np.clip(wet, -1.0, 1.0))


def pitch_shift(w: Waveform, semitones: float) -> Waveform:
    """Constant pitch shift: WSOLA-lengthen by the pitch factor, then resample back."""
    if not -12.0 <= semitones <= 12.0:
        raise AugmentError("semitones must be in [-12, 12]")
    factor = 2.0 ** (semitones / 12.0)
    if factor == 1.0:
        return w.with_samples(w.samples.copy())
    stretched = _wsola(w.samples, 1.0 / factor)
    y = resample_to_length(stretched, len(w))
    return w.with_samples(np.clip(y, -1.0, 1.0))


def _phone(label: str) -> str:
    return label.lower().rstrip("012")


def swap_consonants(w: Waveform, track: AlignmentTrack, seed: int = 0) -> Waveform:
    """Replace each labeled voiced/voiceless consonant with its counterpart's audio.

    Only counterparts present in the same clip are used; the donor span is
    resampled to the recipient's length so clip duration is unchanged.
    """
    track.validate(w.duration_s)
    rng = np.random.default_rng(seed)
    sr = w.sample_rate_hz
    spans: Dict[str, List[Tuple[int, int]]] = {}
    for label, s, e in track.segments:
        a, b = int(round(s * sr)), min(len(w), int(round(e * sr)))
        if b > a:
            spans.setdefault(_phone(label), []).append((a, b))
    y = w.samples.copy()
    for label, s, e in track.segments:
        ph = _phone(label)
        donors = spans.get(VOICING_PAIRS.get(ph, ""), [])
        a, b = int(round(s * sr)), min(len(w), int(round(e * sr)))
        if not donors or b <= a:
            continue
        da, db = donors[int(rng.integers(len(donors)))]
        y[a:b] = resample_to_length(w.samples[da:db], b - a)
    return w.with_samples(np.clip(y, -1.0, 1.0))


def validate_stage_order(specs: Sequence[AugmentSpec]) -> None:
    seen_stage2 = None
    for i, spec in enumerate(specs):
        if spec.stage == 2 and seen_stage2 is None:
            seen_stage2 = i
        elif spec.stage == 1 and seen_stage2 is not None:
            raise StageOrderError(
                f"stage-1 op {spec.op!r} at position {i} follows stage-2 op "
                f"{specs[seen_stage2].op!r} at position {seen_stage2}"
            )


def _apply_one(w: Waveform, spec: AugmentSpec, alignment: Optional[AlignmentTrack]) -> Waveform:
    p = spec.params
    if spec.op == "white_noise":
        return add_white_noise(w, float(p.get("snr_db", 20.0)), spec.seed)
    if spec.op == "pink_noise":
        return add_pink_noise(w, float(p.get("snr_db", 20.0)), spec.seed)
    if spec.op == "micro_gap":
        return insert_micro_gaps(w, int(p.get("n_gaps", 3)), float(p.get("gap_ms", 20.0)), spec.seed)
    if spec.op == "freq_response":
        return shape_freq_response(w, [tuple(b) for b in p["bands"]])
    if spec.op == "time_stretch":
        return time_stretch(w, float(p.get("rate", 1.0)), alignment if p.get("segments_only") else None)
    if spec.op == "rir_convolve":
        if "rir_path" in p:
            rir = load_wav(p["rir_path"], w.sample_rate_hz)
        else:
            rir = exponential_rir(float(p.get("rt60_s", 0.3)), float(p.get("length_s", 0.5)),
                                  w.sample_rate_hz, spec.seed)
        return rir_convolve(w, rir)
    if spec.op == "pitch_shift":
        return pitch_shift(w, float(p.get("semitones", 0.0)))
    if spec.op == "consonant_swap":
        if alignment is None:
            raise AugmentError("consonant_swap needs a phone alignment track")
        return swap_consonants(w, alignment, spec.seed)
    raise AugmentError(f"unknown op {spec.op!r}")


def apply_pipeline(
    w: Waveform,
    specs: Sequence[AugmentSpec],
    alignment: Optional[AlignmentTrack] = None,
) -> Waveform:
    """Left-to-right composition; stage-1 ops must all precede stage-2 ops."""
    validate_stage_order(specs)
    out = w
    for spec in specs:
        out = _apply_one(out, spec, alignment)
    return out


def read_recipe(path: str | os.PathLike) -> List[Tuple[str, List[AugmentSpec]]]:
    """JSON-lines recipe: {"clip_id": ..., "specs": [{"op", "params", "seed"}, ...]}."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                specs = [AugmentSpec.from_dict(d) for d in obj.get("specs", [])]
                rows.append((str(obj["clip_id"]), specs))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, AugmentError) as exc:
                raise AugmentError(f"{path}:{lineno}: bad recipe line ({exc})") from exc
    return rows


def recipe_hash(specs: Iterable[AugmentSpec]) -> str:
    blob = json.dumps([s.to_dict() for s in specs], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def read_alignments(path: str | os.PathLike) -> Dict[str, AlignmentTrack]:
    """`clip_id<TAB>label<TAB>start_s<TAB>end_s` per segment."""
    tracks: Dict[str, AlignmentTrack] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise AlignmentError(f"{path}:{lineno}: expected 4 TAB-separated fields")
            clip_id, label, s, e = parts
            tracks.setdefault(clip_id, AlignmentTrack(clip_id, [])).segments.append((label, float(s), float(e)))
    for t in tracks.values():
        t.segments.sort(key=lambda seg: seg[1])
        t.validate()
    return tracks
