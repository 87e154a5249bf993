"""Exception types shared across the package."""


class GclabError(Exception):
    """Base class for all package errors."""


class ZeroNormError(GclabError):
    """A vector that must be normalized has norm below the 1e-30 floor."""


class EmptyInputError(GclabError):
    pass


class NonFiniteEvaluationError(GclabError):
    """The probed function returned NaN or inf during finite differencing."""


class DimensionMismatchError(GclabError):
    pass


class StaleCacheError(GclabError):
    """An embedding batch was produced by a different parameter version."""


class PoolTooSmallError(GclabError):
    """Contrast pools need at least two samples."""


class NonPositiveCError(GclabError):
    """Conjugate operations require a strictly positive normalizer."""


class NonPositiveInputError(GclabError):
    pass


class UninitializedSampleError(GclabError):
    pass


class LengthMismatchError(GclabError):
    pass


class NonPositiveTruthError(GclabError):
    pass


class ZeroNormColumnError(GclabError):
    """A prototype column collapsed below the norm floor."""


class MissingTargetsError(GclabError):
    pass


class EmptyBatchError(GclabError):
    pass


class NonFiniteGradientError(GclabError):
    """NaN guard tripped; message names the offending parameter block."""


class InvalidSpecError(GclabError):
    pass


class ConfigError(GclabError):
    """Bad or unknown config key/value; maps to exit code 2."""


class CheckpointError(GclabError):
    """Malformed checkpoint/dataset container."""
