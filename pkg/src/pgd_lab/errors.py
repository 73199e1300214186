"""Exception hierarchy shared by every layer of the package.

The CLI maps ``ConfigurationError`` to exit code 2 and every other
``PGDLabError`` to exit code 1.
"""


class PGDLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PGDLabError, ValueError):
    """Invalid model, run configuration or experiment spec."""


class NotStronglyConcaveError(PGDLabError, ValueError):
    """The joint Hessian of the log-likelihood is not negative definite."""


class DegenerateError(PGDLabError, ValueError):
    """A covariance (or conditional covariance) is singular or not SPD."""


class NumericalBlowupError(PGDLabError, FloatingPointError):
    """A sampler produced a non-finite value."""

    def __init__(self, message, step_index, replicate=None):
        super().__init__(message)
        self.step_index = step_index
        self.replicate = replicate


class PreconditionError(PGDLabError, ValueError):
    """An operation was called outside its stated domain (e.g. h > 1/(lambda+L))."""


class NearOptimalInputError(PGDLabError, ValueError):
    """A ratio is undefined because the free-energy gap is numerically zero."""


class IntegrationError(PGDLabError, ArithmeticError):
    """The moment ODE integration left the SPD cone."""

    def __init__(self, message, t, suggested_dt):
        super().__init__(message)
        self.t = t
        self.suggested_dt = suggested_dt


class UnsupportedInputError(PGDLabError, ValueError):
    """Input shapes the estimator does not handle (e.g. unequal cloud sizes)."""


class DomainError(PGDLabError, ValueError):
    """Non-positive data passed to a logarithmic fit."""
