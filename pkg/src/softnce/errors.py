"""Exception taxonomy for the engine.

Every error raised on purpose derives from SoftNCEError so callers can
catch engine failures without swallowing programming mistakes.
"""


class SoftNCEError(Exception):
    """Base class for all engine errors."""


class ConfigError(SoftNCEError):
    """Bad or inconsistent run configuration (unknown keys, invalid values)."""


class DataError(SoftNCEError):
    """Dataset construction or ingestion failed."""


class NumericFailure(SoftNCEError):
    """Non-finite loss or gradient; training must abort, never clip silently."""


class ZeroVector(SoftNCEError):
    """Attempted to normalize a vector with norm below 1e-12."""


class InvalidTemperature(SoftNCEError):
    """Softmax temperature must be strictly positive."""


class DimensionMismatch(SoftNCEError):
    """Operands disagree on a required dimension."""


class ShapeMismatch(SoftNCEError):
    """Parameter and gradient containers disagree in length or shape."""


class EmptyNegatives(SoftNCEError):
    """A contrastive loss needs at least one negative similarity."""


class KTooLarge(SoftNCEError):
    """Requested top-K exceeds the number of available negatives (checked mode)."""


class MisalignedWeights(SoftNCEError):
    """Smoothing weights are not index-aligned with the negatives they score."""


class StaleCache(SoftNCEError):
    """Backward pass received a cache that does not match the network or upstream shape."""


class BatchTooLarge(SoftNCEError):
    """Enqueued batch exceeds queue capacity."""


class EmptyQueue(SoftNCEError):
    """Similarity query against a queue holding no vectors."""


class NotUnitNorm(SoftNCEError):
    """A vector that must be unit-norm is not (tolerance 1e-4)."""


class EmptyTrainSet(SoftNCEError):
    """kNN classification needs at least one training feature."""


class MalformedFile(SoftNCEError):
    """Binary file fails structural validation (size, magic, checksum)."""


class LabelOutOfRange(SoftNCEError):
    """A class label falls outside the declared range."""


class IncompatibleCheckpoint(SoftNCEError):
    """Checkpoint version or architecture does not match the requested run."""
