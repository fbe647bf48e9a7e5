"""Exception types shared across the package.

The CLI maps ValidationError subclasses to exit code 1 and everything
else raised mid-run to exit code 2.
"""


class SrbError(Exception):
    """Base class for package errors."""


class ValidationError(SrbError, ValueError):
    """Bad user input: files, schemas, parameters."""


class AudioFormatError(ValidationError):
    """Unreadable or unsupported audio file."""


class ManifestError(ValidationError):
    """Malformed manifest line or inconsistent metadata."""


class ConfigError(ValidationError):
    """Invalid run configuration."""


class SnrUndefinedError(SrbError, ValueError):
    """SNR arithmetic on a zero-energy signal or noise."""


class DecayRangeError(SrbError, ValueError):
    """Impulse response decays by less than 30 dB; RT60 fit impossible."""


class InfeasibleTargetError(SrbError, ValueError):
    """CTC target admits no alignment for the given frame count."""


class TrainingBudgetError(SrbError, RuntimeError):
    """Toy model failed to reach the target CER within the step budget."""


class AdapterError(SrbError, RuntimeError):
    """External model adapter crashed, timed out, or broke protocol."""
