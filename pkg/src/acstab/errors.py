"""Exception types shared across the package."""


class AcstabError(Exception):
    """Base class for package errors."""


class ConfigError(AcstabError, ValueError):
    """Malformed or unsupported configuration."""


class PreconditionError(AcstabError, ValueError):
    """Inputs violate a documented precondition."""


class DomainError(AcstabError, ValueError):
    """Argument outside the domain where the operation is defined."""


class NumericalError(AcstabError, ArithmeticError):
    """A numerical procedure failed to produce a trustworthy value."""

    def __init__(self, msg, index=None):
        super().__init__(msg)
        self.index = index


class ResolutionError(NumericalError):
    """Sampling grid too coarse for the requested derivative or quadrature."""


class StiffnessError(NumericalError):
    """Adaptive step size underflowed; ``x_reached`` records where."""

    def __init__(self, msg, x_reached):
        super().__init__(msg)
        self.x_reached = x_reached


class BandEdgeError(DomainError):
    """Energy at (or numerically indistinguishable from) a band edge."""


class LevelError(DomainError):
    """Dyadic level out of range for the set."""


class IterationError(NumericalError):
    """Iterative method did not converge within its cap."""


class AlignmentError(AcstabError, ValueError):
    """Sampled quantities live on incompatible grids."""


class DegenerateFitError(NumericalError):
    """Regression input contains zeros or too few points."""
