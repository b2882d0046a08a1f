"""Exception hierarchy shared by every streamvc module."""


class StreamVCError(Exception):
    """Base class for all errors raised by streamvc."""


class ShapeError(StreamVCError, ValueError):
    """Tensor dimensions do not agree."""


class InvalidSpecError(StreamVCError, ValueError):
    """A configuration object violates its invariants."""


class InvalidRangeError(StreamVCError, ValueError):
    pass


class InsufficientInputError(StreamVCError, ValueError):
    """Not enough samples/frames to evaluate an operation."""


class ContractViolation(StreamVCError, RuntimeError):
    """A caller broke a documented precondition (e.g. all-masked attention row)."""


class UnsupportedError(StreamVCError, ValueError):
    """Operation is not available in the requested mode."""


class InvalidChunkError(StreamVCError, ValueError):
    pass


class InvalidSpeakerError(StreamVCError, ValueError):
    pass


class EmptyInputError(StreamVCError, ValueError):
    pass


class AlignmentError(StreamVCError, ValueError):
    pass


class MetricError(StreamVCError, ValueError):
    """Metric undefined for the given inputs."""


class ModelFormatError(StreamVCError):
    """Base class for model container load failures."""


class BadMagicError(ModelFormatError):
    pass


class VersionError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass


class MissingTensorError(ModelFormatError):
    pass


class SchemaError(ModelFormatError):
    """Unknown tensor name or wrong tensor shape."""


class WavFormatError(StreamVCError, ValueError):
    pass
