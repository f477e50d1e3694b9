"""Exception hierarchy shared by all modules."""


class DiracError(Exception):
    """Base class for numerical failures raised by the toolkit."""


class GridMismatchError(DiracError, ValueError):
    """Two grid functions live on distinct grids."""


class DomainError(DiracError, ValueError):
    """A spectral parameter lies outside the requested half-plane."""


class PicardDivergenceError(DiracError):
    """The fixed-point iteration for the remainders did not converge."""

    def __init__(self, message, last_update):
        super().__init__(message)
        self.last_update = last_update


class PairingError(DiracError):
    """Two fundamental matrices do not share a spectral parameter."""


class NonNormalizableError(DiracError):
    """A pair with vanishing inner product cannot be normalized."""


class ContourError(DiracError):
    """The argument principle produced a non-integer winding number."""


class DegenerateEigenvalueError(DiracError):
    """The eigenvalue is multiple; associated functions are not constructed."""


class NormalizationError(DiracError, ValueError):
    """A record is not biorthogonally normalized."""
