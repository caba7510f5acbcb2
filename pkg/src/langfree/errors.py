"""Exception types shared across the package."""


class LangfreeError(Exception):
    """Base class for all package-specific errors."""


class NormalizationError(LangfreeError):
    """A vector that must be normalizable (or unit) is zero or far from unit."""


class DimensionError(LangfreeError):
    """Operands have incompatible shapes or dimensions."""


class ConfigError(LangfreeError):
    """A configuration value violates its documented constraints."""


class FormatError(LangfreeError):
    """A serialized file fails its magic/version/length checks."""


class DataError(LangfreeError):
    """Dataset or feature-pair inputs are malformed or inconsistent."""


class NumericalError(LangfreeError):
    """A computation produced non-finite values or an indefinite matrix."""


class DegenerateNoiseError(LangfreeError):
    """A zero noise draw reached an operation that requires nonzero noise."""


class CheckpointError(LangfreeError):
    """A checkpoint is incompatible with the requested configuration."""
