"""Exception types raised across the package."""


class RadarDiffError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RadarDiffError, ValueError):
    """Invalid or unknown configuration value."""


class RangeViolationError(RadarDiffError, ValueError):
    """A scatterer lies outside the unambiguous range/velocity of the waveform."""


class NumericError(RadarDiffError, ArithmeticError):
    """Non-finite values encountered where finite values are required."""


class DomainError(RadarDiffError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeMismatchError(RadarDiffError, ValueError):
    """Array shapes are incompatible."""


class EmptyCloudError(RadarDiffError, ValueError):
    """A point-set metric was asked to evaluate an empty cloud."""


class FormatError(RadarDiffError, ValueError):
    """A file does not follow the expected on-disk format."""
