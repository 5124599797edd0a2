"""WAV input/output and band-limited resampling into the canonical 16 kHz mono form."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.io import wavfile

from ttseval.errors import (
    AudioReadError,
    AudioWriteError,
    EmptyAudioError,
    UnsupportedAudioError,
)

CANONICAL_RATE = 16000
PCM16_SCALE = 32768.0

KAISER_BETA = 8.6
TAPS_PER_PHASE = 64
_CHUNK = 1 << 15


@dataclass
class Waveform:
    """Mono float signal in [-1, 1] with its sample rate."""

    samples: np.ndarray
    sample_rate_hz: int = CANONICAL_RATE
    clip_id: Optional[str] = None

    def __post_init__(self) -> None:
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {x.shape}")
        if x.size < 1:
            raise EmptyAudioError("waveform has zero samples")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains non-finite samples")
        if np.max(np.abs(x)) > 1.0:
            raise ValueError("waveform samples must lie in [-1, 1]")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError("sample_rate_hz must be positive")
        self.samples = x
        self.sample_rate_hz = int(self.sample_rate_hz)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray, sample_rate_hz: Optional[int] = None) -> "Waveform":
        rate = self.sample_rate_hz if sample_rate_hz is None else sample_rate_hz
        return Waveform(samples, rate, self.clip_id)


def _check_riff(path: str) -> None:
    try:
        with open(path, "rb") as fh:
            header = fh.read(12)
    except OSError as exc:
        raise AudioReadError(f"cannot open {path}: {exc}") from exc
    if len(header) < 12 or header[:4] != b"RIFF" or header[8:12] != b"WAVE":
        raise AudioReadError(f"{path} is not a RIFF/WAVE file")


def load_wav(path: str | os.PathLike, target_hz: int = CANONICAL_RATE) -> Waveform:
    """Read a PCM16 or float32 WAVE file as a mono waveform at `target_hz`.

    Stereo is averaged across channels. 16-bit samples are scaled by 1/32768.
    """
    path = os.fspath(path)
    _check_riff(path)
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise UnsupportedAudioError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise AudioReadError(f"{path}: {exc}") from exc

    if data.dtype == np.int16:
        x = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        x = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise UnsupportedAudioError(f"{path}: sample format {data.dtype} is not PCM16 or float32")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise EmptyAudioError(f"{path} holds no samples")
    clip_id = os.path.splitext(os.path.basename(path))[0]
    w = Waveform(x, int(rate), clip_id)
    if w.sample_rate_hz != target_hz:
        w = resample(w, target_hz)
    return w


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    q = np.round(np.asarray(samples, dtype=np.float64) * PCM16_SCALE)
    return np.clip(q, -32768, 32767).astype(np.int16)


def save_wav(w: Waveform, path: str | os.PathLike) -> None:
    """Write `w` as a 16-bit PCM mono file at its own sample rate."""
    try:
        wavfile.write(os.fspath(path), w.sample_rate_hz, to_pcm16(w.samples))
    except OSError as exc:
        raise AudioWriteError(f"cannot write {path}: {exc}") from exc


def _kaiser_taps(tau: np.ndarray, cutoff: float, half_width: float) -> np.ndarray:
    # tau in input-sample units; window support is [-half_width, half_width]
    r = np.clip(tau / half_width, -1.0, 1.0)
    window = np.i0(KAISER_BETA * np.sqrt(1.0 - r * r)) / np.i0(KAISER_BETA)
    return cutoff * np.sinc(cutoff * tau) * window


def sinc_interpolate(
    x: np.ndarray,
    base: np.ndarray,
    frac: np.ndarray,
    cutoff: float,
    taps: int = TAPS_PER_PHASE,
) -> np.ndarray:
    """Evaluate a band-limited reconstruction of `x` at positions base + frac.

    `base` holds integer sample indices, `frac` the fractional offsets in [0, 1).
    `cutoff` is relative to the input Nyquist (1.0 = no extra low-pass).
    Each output is normalized by its tap sum so DC passes exactly away from the edges.
    """
    half = taps // 2
    xpad = np.concatenate([np.zeros(half), np.asarray(x, dtype=np.float64), np.zeros(half + 1)])
    offsets = np.arange(-half + 1, half + 1)  # 64 taps: k = base-31 .. base+32
    out = np.empty(base.size)
    for start in range(0, base.size, _CHUNK):
        b = base[start:start + _CHUNK]
        f = frac[start:start + _CHUNK]
        tau = f[:, None] - offsets[None, :]
        h = _kaiser_taps(tau, cutoff, float(half))
        h /= h.sum(axis=1, keepdims=True)
        idx = b[:, None] + offsets[None, :] + half
        idx = np.clip(idx, 0, xpad.size - 1)
        out[start:start + _CHUNK] = np.einsum("ij,ij->i", xpad[idx], h)
    return out


def resample_to_length(x: np.ndarray, n_out: int) -> np.ndarray:
    """Windowed-sinc resampling of `x` onto `n_out` evenly spaced points."""
    n_in = x.size
    if n_out == n_in:
        return np.asarray(x, dtype=np.float64).copy()
    step = n_in / n_out
    pos = np.arange(n_out) * step
    base = np.floor(pos).astype(np.int64)
    return sinc_interpolate(x, base, pos - base, min(1.0, 1.0 / step))


def resample(w: Waveform, target_hz: int) -> Waveform:
    """Kaiser-windowed sinc resampling (beta 8.6, 64 taps per phase)."""
    if target_hz <= 0:
        raise ValueError("target_hz must be positive")
    src = w.sample_rate_hz
    if target_hz == src:
        return Waveform(w.samples.copy(), src, w.clip_id)
    g = math.gcd(src, target_hz)
    up, down = target_hz // g, src // g
    n_out = -(-w.samples.size * up // down)
    n = np.arange(n_out, dtype=np.int64)
    # exact rational positions: n * down / up
    base = (n * down) // up
    frac = ((n * down) % up) / up
    y = sinc_interpolate(w.samples, base, frac, min(1.0, up / down))
    return Waveform(np.clip(y, -1.0, 1.0), target_hz, w.clip_id)
