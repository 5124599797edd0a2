"""Frame-level spectral features, utterance pooling and the embedding interfaces.

The log-mel mean embedding is a desk-scale stand-in for SSL encoders. Real
encoder vectors can be injected through the precomputed-embedding file format
(`clip_id<TAB>v1,v2,...`) without touching downstream code.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Protocol

import numpy as np

from ttseval.audio_io import Waveform
from ttseval.errors import EmbeddingFileError, SignalTooShortError

WIN = 400
HOP = 160
NFFT = 512
N_MELS = 40
FMIN = 20.0
FMAX = 7600.0
LOG_FLOOR = 1e-10


@dataclass
class FeatureMatrix:
    frames: np.ndarray
    frame_hop_s: float
    valid_frames: Optional[int] = None

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError("frames must be a T x D matrix")
        if self.valid_frames is None:
            self.valid_frames = self.frames.shape[0]
        if not 1 <= self.valid_frames <= self.frames.shape[0]:
            raise ValueError(f"valid_frames={self.valid_frames} outside [1, {self.frames.shape[0]}]")
        if not np.all(np.isfinite(self.frames[: self.valid_frames])):
            raise ValueError("feature matrix holds non-finite values")

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class UtteranceEmbedding:
    vector: np.ndarray
    clip_id: str = ""

    def __post_init__(self) -> None:
        self.vector = np.asarray(self.vector, dtype=np.float64).ravel()
        if not np.all(np.isfinite(self.vector)):
            raise ValueError(f"embedding for {self.clip_id!r} is not finite")

    @property
    def dim(self) -> int:
        return self.vector.size


def frame_count(n_samples: int, win: int, hop: int) -> int:
    return (n_samples - win) // hop + 1


def stft_power(w: Waveform, win: int = WIN, hop: int = HOP, nfft: int = NFFT) -> FeatureMatrix:
    """Hann-windowed power spectrogram; the trailing partial frame is dropped."""
    if win > nfft or hop < 1 or win < 1:
        raise ValueError(f"bad STFT geometry win={win} hop={hop} nfft={nfft}")
    x = w.samples
    if x.size < win:
        raise SignalTooShortError(f"signal of {x.size} samples is shorter than one {win}-sample window")
    n_frames = frame_count(x.size, win, hop)
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    window = np.hanning(win + 1)[:-1]  # periodic Hann
    spec = np.fft.rfft(frames * window, n=nfft, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    return FeatureMatrix(power, hop / w.sample_rate_hz)


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(
        f >= min_log_hz,
        min_log_mel + np.log(np.maximum(f, min_log_hz) / min_log_hz) / logstep,
        f / f_sp,
    )


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_filterbank(sample_rate: int, nfft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular filters on the Slaney mel scale, each row summing to one."""
    bin_hz = np.arange(nfft // 2 + 1) * sample_rate / nfft
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, bin_hz.size))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
        if fb[m].sum() == 0.0:
            # filter narrower than a bin: take the nearest bin
            fb[m, np.argmin(np.abs(bin_hz - center))] = 1.0
    return fb / fb.sum(axis=1, keepdims=True)


def log_mel(
    spec: FeatureMatrix,
    n_mels: int = N_MELS,
    fmin: float = FMIN,
    fmax: float = FMAX,
    sample_rate: int = 16000,
) -> FeatureMatrix:
    if n_mels < 4:
        raise ValueError("n_mels must be at least 4")
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise ValueError(f"need 0 <= fmin < fmax <= {sample_rate / 2}")
    nfft = 2 * (spec.dim - 1)
    fb = mel_filterbank(sample_rate, nfft, n_mels, fmin, fmax)
    mel = spec.frames @ fb.T
    return FeatureMatrix(np.log(mel + LOG_FLOOR), spec.frame_hop_s, spec.valid_frames)


def embed_utterance(
    f: FeatureMatrix, projection: Optional[np.ndarray] = None, clip_id: str = ""
) -> UtteranceEmbedding:
    """Temporal mean over the valid frames, optionally followed by a D x E projection."""
    pooled = f.frames[: f.valid_frames].mean(axis=0)
    if projection is not None:
        pooled = pooled @ projection
    return UtteranceEmbedding(pooled, clip_id)


_WORD = re.compile(r"[\w']+")


def _bucket(token: str, dim: int, seed: int) -> tuple[int, float]:
    digest = hashlib.blake2b(f"{seed}\x1f{token}".encode(), digest_size=8).digest()
    h = int.from_bytes(digest, "little")
    return h % dim, (1.0 if (h >> 63) & 1 else -1.0)


def text_embed(transcript: str, dim: int = 32, seed: int = 0, clip_id: str = "") -> UtteranceEmbedding:
    """Signed feature hashing of lowercase unigrams and bigrams, L2-normalized."""
    if dim < 8:
        raise ValueError("dim must be at least 8")
    words = _WORD.findall(transcript.lower())
    tokens = words + [f"{a} {b}" for a, b in zip(words, words[1:])]
    v = np.zeros(dim)
    for tok in tokens:
        i, sign = _bucket(tok, dim, seed)
        v[i] += sign
    norm = np.linalg.norm(v)
    if norm > 0:
        v /= norm
    return UtteranceEmbedding(v, clip_id)


class Embedder(Protocol):
    def __call__(self, w: Waveform) -> UtteranceEmbedding: ...


@dataclass
class LogMelEmbedder:
    """Default audio extractor: log-mel frames averaged over time."""

    win: int = WIN
    hop: int = HOP
    nfft: int = NFFT
    n_mels: int = N_MELS
    fmin: float = FMIN
    fmax: float = FMAX
    projection: Optional[np.ndarray] = field(default=None, repr=False)

    def features(self, w: Waveform) -> FeatureMatrix:
        spec = stft_power(w, self.win, self.hop, self.nfft)
        return log_mel(spec, self.n_mels, self.fmin, self.fmax, w.sample_rate_hz)

    def __call__(self, w: Waveform) -> UtteranceEmbedding:
        return embed_utterance(self.features(w), self.projection, w.clip_id or "")

    def signature(self) -> str:
        return f"logmel:{self.win}:{self.hop}:{self.nfft}:{self.n_mels}:{self.fmin}:{self.fmax}"


def read_embeddings(path: str | os.PathLike) -> Dict[str, UtteranceEmbedding]:
    """Load `clip_id<TAB>v1,v2,...` lines; every vector must share one dimension."""
    out: Dict[str, UtteranceEmbedding] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                clip_id, values = line.split("\t")
                vec = np.array([float(v) for v in values.split(",")])
            except ValueError as exc:
                raise EmbeddingFileError(f"{path}:{lineno}: malformed line ({exc})") from exc
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise EmbeddingFileError(f"{path}:{lineno}: dimension {vec.size} != {dim}")
            try:
                out[clip_id] = UtteranceEmbedding(vec, clip_id)
            except ValueError as exc:
                raise EmbeddingFileError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_embeddings(path: str | os.PathLike, embeddings: Mapping[str, UtteranceEmbedding] | Iterable[UtteranceEmbedding]) -> None:
    items = embeddings.values() if isinstance(embeddings, Mapping) else embeddings
    with open(path, "w", encoding="utf-8") as fh:
        for e in items:
            fh.write(e.clip_id + "\t" + ",".join(repr(float(v)) for v in e.vector) + "\n")
