"""Exception hierarchy shared by all pipeline stages."""


class IgaPeecError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(IgaPeecError, ValueError):
    """Invalid or degenerate geometry (bad knots, weights, Jacobians)."""


class ConformityError(GeometryError):
    """Adjacent patches do not meet along a common edge or vertex."""

    def __init__(self, message, patches=None, gap=None):
        super().__init__(message)
        self.patches = patches
        self.gap = gap


class DesignError(IgaPeecError, ValueError):
    """Design vector misuse: wrong length, values outside the box bounds."""


class InfeasibleDesign(IgaPeecError):
    """A candidate design violates a guard or breaks patch conformity.

    The optimizer treats this outcome as an extreme-barrier value.
    """


class QuadratureError(IgaPeecError):
    """Element pair adjacency could not be resolved to a quadrature case."""


class NumericalError(IgaPeecError, ArithmeticError):
    """Singular or badly conditioned linear system."""

    def __init__(self, message, omega=None):
        super().__init__(message)
        self.omega = omega
