"""Exception hierarchy.

Two roots matter to callers: :class:`ConfigError` for bad parameters or
configuration (CLI exit code 2) and :class:`DataError` for malformed or
inconsistent input data (CLI exit code 3).
"""


class EvflareError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(EvflareError, ValueError):
    """Invalid parameters, bounds or configuration."""


class DataError(EvflareError, ValueError):
    """Input data violates a format or type invariant."""


# event_core
class OutOfBounds(DataError):
    pass


class OutOfWindow(DataError):
    pass


class BadPolarity(DataError):
    pass


class InvalidRange(ConfigError):
    pass


class CorruptHeader(DataError):
    pass


class TruncatedRecord(DataError):
    pass


# sensor_model
class EmptyInput(DataError):
    pass


class NegativeIntensity(DataError):
    pass


class BadSamplePeriod(ConfigError):
    pass


# flare_synth
class BadBounds(ConfigError):
    pass


class DegenerateScript(ConfigError):
    pass


# fusion
class GeometryMismatch(DataError):
    pass


class WindowMismatch(DataError):
    pass


class EmptyComponentList(ConfigError):
    pass


# voxel_codec
class BadBinCount(ConfigError):
    pass


# metrics
class EmptyGroundTruth(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class NotDivisible(ConfigError):
    pass


# pipeline
class InsufficientOverlap(DataError):
    pass


class BadMask(ConfigError):
    pass


class MethodUnknown(ConfigError):
    pass


class DatasetCorrupt(DataError):
    pass


class SourceMissing(DataError):
    pass


class AssetMissing(DataError):
    pass


class ConfigInvalid(ConfigError):
    pass
