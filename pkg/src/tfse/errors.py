"""Exception types raised across the library.

Everything derives from TfseError so callers can catch library failures
with a single except clause; the CLI maps them to exit code 2.
"""


class TfseError(Exception):
    """Base class for all library errors."""


class DimensionError(TfseError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class GraphError(TfseError, ValueError):
    """Autodiff contract violation (non-scalar loss, grad/value shape drift)."""


class ConfigError(TfseError, ValueError):
    """Invalid, unknown, or inconsistent configuration."""


class FormatError(TfseError, ValueError):
    """A file's encoding is not one this library reads."""


class SampleRateError(TfseError, ValueError):
    """A waveform's sample rate differs from what the pipeline requires."""


class DegenerateInputError(TfseError, ValueError):
    """Input is empty, all-zero, or otherwise carries no usable signal."""


class NumericError(TfseError, ArithmeticError):
    """Non-finite values appeared where the math guarantees finite ones."""


class DataError(TfseError, ValueError):
    """A corpus or manifest is empty or unusable."""


class LengthError(TfseError, ValueError):
    """A signal is too short for the requested analysis."""


class TrainingAborted(TfseError, RuntimeError):
    """Training stopped on a non-finite loss; message carries diagnostics."""
