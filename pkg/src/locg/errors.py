class LocgError(Exception):
    """Base class for errors raised by this package."""


class RankDeficientError(LocgError, ValueError):
    pass


class EmptyBasisError(LocgError, ArithmeticError):
    """Every candidate column was dropped during orthonormalization."""


class SubspaceCollapseError(EmptyBasisError):
    pass


class BreakdownError(LocgError, ArithmeticError):
    """The projected eigenproblem lost symmetry (nonreal Ritz values)."""


class DegenerateSpectrumError(LocgError, ValueError):
    pass


class NotHermitianError(LocgError, ValueError):
    pass


class MatrixMarketError(LocgError, ValueError):
    pass
