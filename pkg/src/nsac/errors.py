"""Error taxonomy shared across the package.

The command line harness maps these onto process exit codes:
validation/domain errors -> 1, numeric errors -> 2, I/O errors -> 3.
"""


class NsacError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(NsacError):
    """A configuration or argument failed validation before any compute ran."""


class DomainError(ValidationError):
    """A mathematical input lay outside the domain of the requested operation."""


class NumericError(NsacError):
    """A computation produced or received non-finite values."""


class GraphError(NsacError):
    """The autodiff graph was used in a structurally invalid way."""
