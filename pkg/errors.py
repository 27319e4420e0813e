"""Exception hierarchy shared by every module"""
from typing import Optional


class DelayEquationError(Exception):
    """Base class for all library errors"""


class DomainError(DelayEquationError, ValueError):
    """Evaluation outside the declared domain"""


class DimensionError(DomainError):
    """Operand dimensions disagree"""


class NumericError(DelayEquationError, ArithmeticError):
    """Non-finite values appeared in a computation"""


class MetricError(DelayEquationError, ValueError):
    """Metric matrix is not symmetric positive definite"""


class StabilityError(DelayEquationError, ValueError):
    """Generator is not exponentially stable"""


class CertificateError(DelayEquationError, RuntimeError):
    """Decay certificate estimation did not close"""


class SolverError(DelayEquationError, RuntimeError):
    """Base class for integrator failures"""


class PreconditionError(SolverError):
    pass


class InvariantViolation(SolverError):
    """Internal guard tripped; indicates a bug rather than bad input"""


class WindowError(SolverError):
    def __init__(self, message: str, interval: tuple):
        super().__init__(message)
        self.interval = interval


class ConvergenceError(SolverError):
    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class OracleDivergence(SolverError):
    def __init__(self, message: str, blow_up_time: float):
        super().__init__(message)
        self.blow_up_time = blow_up_time


class HypothesisViolation(DelayEquationError, ValueError):
    """A stability hypothesis fails, so the bound it supports is not asserted"""

    def __init__(self, message: str, hypothesis: Optional[str] = None):
        super().__init__(message)
        self.hypothesis = hypothesis


class RegionError(DelayEquationError, ValueError):
    """Damping or delay region not resolved by the mesh"""


class ConfigError(DelayEquationError, ValueError):
    def __init__(self, message: str, key_path: str = ""):
        super().__init__(f"{key_path}: {message}" if key_path else message)
        self.key_path = key_path
