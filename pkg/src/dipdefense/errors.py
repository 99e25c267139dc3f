"""Exception types raised across the toolkit."""


class DefenseError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(DefenseError, ValueError):
    """A configuration object or file is inconsistent or incomplete."""


class InputError(DefenseError, ValueError):
    """An argument has the wrong shape, range or length."""


class CapabilityError(DefenseError, TypeError):
    """The adapter lacks a capability the caller needs (e.g. gradients)."""


class NoCrossingError(DefenseError, ValueError):
    """Two gap values share a sign, so no boundary lies between them."""


class OptimizationDivergedError(DefenseError, RuntimeError):
    """The generator loss became non-finite.

    Attributes:
        iteration: iteration at which the non-finite loss was observed.
        partial_trace: the trace recorded up to the last finite iteration.
    """

    def __init__(self, message, iteration, partial_trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.partial_trace = partial_trace
