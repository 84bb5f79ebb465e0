"""Exception types shared across the package.

The CLI maps ValidationError (and subclasses) to exit code 1 and
runtime/numeric failures to exit code 2.
"""


class ValidationError(ValueError):
    """Bad input data, configuration, or arguments."""


class DimensionError(ValidationError):
    """Array shape mismatch; the message names the offending axis."""


class FormatError(ValidationError):
    """Malformed external file (CSV, embeddings, config)."""


class ConflictError(ValidationError):
    """Two class names collide after tokenization."""


class CoverageError(ValidationError):
    """A label map does not cover the class set exactly."""


class NumericError(RuntimeError):
    """Non-finite values where finite arithmetic was required."""


class InvariantError(RuntimeError):
    """Internal state protocol violated (e.g. backward before forward)."""
