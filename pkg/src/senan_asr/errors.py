"""Exception types shared across the package."""


class SenanError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(SenanError, ValueError):
    pass


class DomainError(SenanError, ValueError):
    pass


class NotScalar(SenanError, ValueError):
    pass


class DegenerateMatrix(SenanError, ValueError):
    pass


class InvalidConfig(SenanError, ValueError):
    pass


class ZeroReferenceSignal(SenanError, ValueError):
    pass


class ZeroNoiseSignal(SenanError, ValueError):
    pass


class LengthMismatch(SenanError, ValueError):
    pass


class InvalidFactor(SenanError, ValueError):
    pass


class TooShort(SenanError, ValueError):
    pass


class UnknownSpeaker(SenanError, KeyError):
    pass


class InvalidWidth(SenanError, ValueError):
    pass


class FrameCountMismatch(SenanError, ValueError):
    pass


class UnknownPhone(SenanError, ValueError):
    pass


class EmptyTranscript(SenanError, ValueError):
    pass


class NoPath(SenanError):
    """Raised when a graph admits no complete path for the given frames."""


class LabelOutOfRange(SenanError, ValueError):
    pass


class MissingUtterance(SenanError, KeyError):
    pass


class CheckpointError(SenanError):
    """Raised on malformed or incompatible checkpoint archives."""


class DataError(SenanError):
    """Malformed corpus, manifest, or archive on disk."""
