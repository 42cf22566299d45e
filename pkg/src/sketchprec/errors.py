"""Exception hierarchy shared by all modules."""


class SketchPrecError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SketchPrecError, ValueError):
    """Operand shapes do not agree."""


class NotSPDError(SketchPrecError):
    """Cholesky factorization broke down on a nonpositive pivot."""


class SingularError(SketchPrecError):
    """A square operator could not be factorized (zero pivot)."""


class RankDeficientError(SketchPrecError):
    """A basis is numerically rank deficient."""


class NotOrthonormalError(SketchPrecError):
    """A basis fails its declared orthonormality check."""


class NotPowerOfTwoError(SketchPrecError, ValueError):
    pass


class DenominatorNonpositiveError(SketchPrecError, ValueError):
    pass


class NotThetaOrthonormalError(NotOrthonormalError):
    """A sketched basis Theta U_r is not l2-orthonormal."""


class SingularReducedError(SingularError):
    """The reduced Galerkin matrix is singular."""
