"""Exception hierarchy."""


class NullGradError(Exception):
    """Base class for all library errors."""


class ConfigError(NullGradError, ValueError):
    """A system configuration could not be parsed or is inconsistent."""


class QuadratureError(NullGradError, ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message, achieved_error=None):
        super().__init__(message)
        self.achieved_error = achieved_error


class NotControllableError(NullGradError, ValueError):
    """The pair (A, B) cannot be steered to zero at the requested horizon."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class ControlConstructionError(NullGradError, ValueError):
    """A closed-form control is not applicable (e.g. B not square)."""


class CovarianceError(NullGradError, ValueError):
    """An assembled joint covariance is not positive semidefinite."""


class CapacityError(NullGradError, ValueError):
    """Requested derivative order exceeds the supported cap."""


class UnsupportedFunctionError(NullGradError, ValueError):
    """No closed-form oracle exists for this test function and dimension."""
