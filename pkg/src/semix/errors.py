"""Exception hierarchy shared across the package.

Everything raised on purpose derives from SemixError so callers can catch
package failures without catching programming bugs.  The CLI maps these
classes onto its exit codes.
"""


class SemixError(Exception):
    pass


class ShapeError(SemixError):
    """Operand dimensions or extents do not line up."""


class ValidationError(SemixError):
    """A value is outside its documented domain (bad lambda, non-simplex row, ...)."""


class ConfigError(SemixError):
    """A configuration key or value is unusable."""


class UsageError(SemixError):
    """An API was called in a way its contract forbids (non-scalar loss, empty inputs)."""


class NumericError(SemixError):
    """NaN or Inf showed up in a computation."""


class FormatError(SemixError):
    """A binary file or checkpoint does not match its declared layout."""


class LengthError(FormatError):
    """Payload shorter or longer than the header promised."""


class TrainingAbort(SemixError):
    """Training stopped early on a numeric failure; message carries epoch/batch/lr."""
