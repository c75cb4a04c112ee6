"""Exception types raised by the navigation and filter-bank routines."""


class JmnavError(Exception):
    """Base class for all package errors."""


class ConfigError(JmnavError, ValueError):
    """Invalid model, prior, profile or run configuration."""


class GimbalLock(JmnavError, ValueError):
    """Euler conversion requested too close to pitch = +/- pi/2."""


class DegenerateInput(JmnavError, ValueError):
    """Rotation projection has no unique solution."""


class DegenerateWindow(JmnavError, ValueError):
    """Detector window with an undefined gravity direction."""


class NumericalBlowup(JmnavError, ArithmeticError):
    """Covariance diagonal exceeded the blow-up limit during prediction."""

    def __init__(self, message, sample=None, branch=None):
        super().__init__(message)
        self.sample = sample
        self.branch = branch


class SingularInnovation(JmnavError, ArithmeticError):
    """Innovation covariance not invertible to working precision."""

    def __init__(self, message, sample=None, branch=None):
        super().__init__(message)
        self.sample = sample
        self.branch = branch


class AllBranchesDead(JmnavError, ArithmeticError):
    """Every child hypothesis weight underflowed."""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class NonFinite(JmnavError, ArithmeticError):
    """A marginal-likelihood term was not finite."""


class NotConverged(JmnavError, RuntimeError):
    """The transition-matrix optimizer hit its iteration cap."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ParseError(JmnavError, ValueError):
    """Malformed data file."""

    def __init__(self, message, path=None, line=None):
        super().__init__(message)
        self.path = path
        self.line = line
