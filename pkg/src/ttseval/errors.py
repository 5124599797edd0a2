"""Exception hierarchy shared by every ttseval module."""


class TtsEvalError(Exception):
    """Base class for all ttseval errors."""


class AudioReadError(TtsEvalError):
    """The file could not be opened or is not a RIFF/WAVE container."""


class UnsupportedAudioError(TtsEvalError):
    """The WAVE file uses a codec or sample format we do not decode."""


class EmptyAudioError(TtsEvalError):
    """The audio holds zero samples."""


class AudioWriteError(TtsEvalError):
    pass


class SignalTooShortError(TtsEvalError):
    pass


class EmbeddingFileError(TtsEvalError):
    pass


class AugmentError(TtsEvalError):
    pass


class StageOrderError(AugmentError):
    """A stage-2 (phonetic) op was listed before a stage-1 (signal) op."""


class AlignmentError(AugmentError):
    pass


class DataError(TtsEvalError):
    """Malformed or insufficient rating / manifest data."""


class InsufficientPairsError(DataError):
    pass


class DimensionMismatchError(TtsEvalError):
    pass


class TrainingDivergedError(TtsEvalError):
    pass


class MetricError(TtsEvalError):
    """Metric is undefined for the given input (zero variance, single class...)."""


class ModelFileError(TtsEvalError):
    pass
