"""Exception hierarchy shared by all modules."""


class SpdcSimError(Exception):
    """Base class for every error raised by spdcsim."""


class InvalidInputError(SpdcSimError, ValueError):
    pass


class NumericalError(SpdcSimError, ArithmeticError):
    pass


class RangeError(InvalidInputError):
    """Wavelength outside the validity range of a dispersion model."""


class NoSolutionError(InvalidInputError):
    pass


class DegeneratePhaseMatchingError(NumericalError):
    pass


class UnusableMaterialError(InvalidInputError):
    pass


class ResolutionError(InvalidInputError):
    pass


class InsufficientStatisticsError(NumericalError):
    pass


class FitError(NumericalError):
    """Nonlinear fit did not converge; ``residuals`` holds the last residual vector."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class ConvergenceError(NumericalError):
    """Optimizer gave up; carries the best state seen and the objective trace."""

    def __init__(self, message, best_state=None, trace=None):
        super().__init__(message)
        self.best_state = best_state
        self.trace = list(trace) if trace is not None else []


class ConfigError(SpdcSimError, ValueError):
    """Configuration problem; ``path`` is a dotted key path, ``line`` 1-based when known."""

    def __init__(self, message, path=None, line=None, source=None):
        self.path = path
        self.line = line
        self.source = source
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if path:
            where.append(path)
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
