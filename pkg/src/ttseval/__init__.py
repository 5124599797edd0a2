"""Automated TTS quality evaluation: rater standardization, augmentation,
antisymmetric pairwise preference models and stacked MOS regression."""

from ttseval.audio_io import Waveform, load_wav, resample, save_wav
from ttseval.errors import TtsEvalError

__all__ = ["Waveform", "load_wav", "save_wav", "resample", "TtsEvalError"]
__version__ = "0.1.0"
