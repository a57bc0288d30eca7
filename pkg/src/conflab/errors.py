"""Exception taxonomy shared by all modules.

Argument errors (bad degrees, bad indices, bad grids) raise plain
ValueError.  The classes below mark *mathematical* failure modes: leaving
a positivity cone, losing finiteness, or an iteration that legitimately
does not converge.
"""


class DomainError(ValueError):
    """Input is outside the mathematical domain of the operation."""


class ConeError(DomainError):
    """A positivity-cone condition (sigma_k > 0, L > 0, v_m > 0) fails."""


class PathConeError(ConeError):
    """A quadrature node along a path of conformal factors leaves the cone."""

    def __init__(self, s, message=None):
        self.s = float(s)
        super().__init__(message or f"segment leaves the cone at s = {self.s:.6f}")


class NumericalError(ArithmeticError):
    """Derived quantities stopped being finite, or a required internal
    consistency check (e.g. quadrature Richardson comparison) failed."""


class ConvergenceError(RuntimeError):
    """An iterative solver exhausted its budget without meeting tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class StiffnessError(RuntimeError):
    """Adaptive time step collapsed below the trustworthy floor."""


class ConfigError(ValueError):
    """Malformed experiment configuration (unknown key, bad value)."""
