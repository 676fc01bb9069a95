"""Exception hierarchy shared by every module."""


class VacError(Exception):
    """Base class for library errors."""


class InvalidInputError(VacError, ValueError):
    """Malformed or out-of-range input."""


class NumericalError(VacError, ArithmeticError):
    """A computation produced a non-finite value or a singular system."""

    def __init__(self, message, iteration=None):
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.iteration = iteration


class DivergenceError(VacError):
    """Iterates blew up; `trace` holds everything recorded before the blow-up."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class GenerationError(VacError):
    """A random instance generator could not satisfy its post-conditions."""


class EstimationError(VacError):
    """An inner estimation loop hit its iteration cap."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
