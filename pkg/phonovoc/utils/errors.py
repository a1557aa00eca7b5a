"""Exception hierarchy for the codec.

Every error carries the process exit code the command-line front end uses
when the error escapes a command.
"""


class PhonovocError(Exception):
    """Base class for all codec errors."""

    exit_code = 1


class ConfigError(PhonovocError, ValueError):
    """Invalid configuration value or missing model/input file."""

    exit_code = 1


class InputSignalError(PhonovocError, ValueError):
    """Input audio or feature data cannot be processed."""

    exit_code = 2


class NoVoicedSpeech(InputSignalError):
    """Pitch extraction found no voiced frame."""


class TooShort(InputSignalError):
    """Signal is shorter than the minimum the operation needs."""


class SegmentTooShort(InputSignalError):
    """Polynomial fit requested on fewer than two samples."""


class DimensionError(InputSignalError):
    """Array shapes do not agree."""


class InvalidDrive(InputSignalError):
    """Spiking network drive contains non-finite values."""


class NoSyllables(InputSignalError):
    """Operation needs at least one syllable code."""


class StreamIntegrityError(PhonovocError, RuntimeError):
    """Bitstream cannot be written or read back faithfully."""

    exit_code = 3


class NotABitstream(StreamIntegrityError):
    """Bytes do not start with a supported container header."""


class CorruptStream(StreamIntegrityError):
    """Container is truncated or its sections disagree with the header."""


class CodebookMismatch(StreamIntegrityError):
    """Stream references codebooks other than the ones supplied."""


class EncodeOverflow(StreamIntegrityError):
    """A field value does not fit its wire width."""


class TrainingError(PhonovocError, RuntimeError):
    """Model or codebook training failed."""

    exit_code = 4


class TrainingDiverged(TrainingError):
    """Loss became non-finite during training."""


class EmptyCorpus(TrainingError):
    """Training input holds no usable data."""


class DegenerateCorpus(TrainingError):
    """Training input has zero spread where a spread is required."""
