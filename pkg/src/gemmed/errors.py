"""Exception types shared across the package.

Input validation problems raise the builtin ``ValueError``; the classes
here mark failures of a different kind (numerics, training outcome) so
callers can map them to distinct exit codes.
"""


class GemMedError(Exception):
    """Base class for package-specific failures."""


class NumericsError(GemMedError):
    """A numerical routine failed, e.g. a Gram factorization."""


class TrainingFailure(GemMedError):
    """Training finished in an unusable state."""
