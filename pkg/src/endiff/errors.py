"""Exception hierarchy shared by all modules."""


class EndiffError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(EndiffError, ValueError):
    """A parameter lies outside its admissible range."""


class DomainError(EndiffError, ValueError):
    """A point lies outside the domain of a field or datum."""


class IndeterminateOrderError(EndiffError):
    """Every probed derivative at a critical point fell below threshold."""


class IntegrationError(EndiffError):
    """A stochastic integrator could not keep its state admissible."""

    def __init__(self, message, tau=None):
        super().__init__(message)
        self.tau = tau


class NumericalInstabilityError(EndiffError):
    """Non-finite values appeared in a deterministic solve."""


class ResolutionError(EndiffError):
    """A mesh is too coarse to resolve the initial datum."""


class CoverageError(EndiffError):
    """A quadrature region does not cover the datum support."""


class HorizonTooShortError(EndiffError):
    """A decay curve never reached the requested threshold."""

    def __init__(self, message, required_extension=None):
        super().__init__(message)
        self.required_extension = required_extension


class InsufficientSweepError(EndiffError):
    """Too few diffusivities, or too narrow a span, to fit an exponent."""


class ValidityWindowError(EndiffError):
    """No recorded time falls inside the validity window of a bound."""


class ConfigError(EndiffError, ValueError):
    """Experiment configuration failed validation."""
