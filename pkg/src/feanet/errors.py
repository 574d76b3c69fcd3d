"""Exception hierarchy.

Validation problems derive from ``ValueError`` so callers that only care
about bad input can catch the builtin; numerical failures are kept separate
because the CLI maps them to a different exit code.
"""


class FeanetError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(FeanetError, ValueError):
    """An input violates a shape, range or consistency requirement."""


class DimensionError(ValidationError):
    """A grid or tensor has an unsupported size."""


class ParseError(ValidationError):
    """A serialized image or manifest could not be decoded."""


class MulticollinearityError(ValidationError):
    """The filter-regression design matrix is rank deficient.

    Attributes
    ----------
    channel : ndarray or None
        Coefficients ``c`` with ``sum_p c_p V^p = 0`` on the interior when
        the loading channels themselves are linearly dependent.
    rank : int
        Numerical rank found.
    unknowns : int
        Number of filter entries that had to be determined.
    null_vector : ndarray or None
        Right singular vector of the smallest singular value, reshaped to
        ``(3, 3, Q)``. It names the combination of response channels that
        the data cannot tell apart.
    """

    def __init__(self, message, channel=None, rank=None, unknowns=None, null_vector=None):
        super().__init__(message)
        self.channel = channel
        self.rank = rank
        self.unknowns = unknowns
        self.null_vector = null_vector


class IdentifiabilityError(ValidationError):
    """The data cannot determine the requested material parameters."""


class NumericalError(FeanetError):
    """A numerical procedure failed to produce a usable answer."""


class SingularSystemError(NumericalError):
    """The linear system has no unique solution (e.g. no Dirichlet nodes)."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class DivergenceError(NumericalError):
    """The Jacobi network residual blew up."""


class StagnationError(NumericalError):
    """An optimizer stopped improving before converging."""
