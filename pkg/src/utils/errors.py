"""
Exception hierarchy shared by the solvers, the harness and the CLI
"""
from typing import Any, Dict, Optional


class HomogenizationError(Exception):
    """Base class for every error raised by the lab"""


class ConfigurationError(HomogenizationError, ValueError):
    """Invalid configuration file, section value or incompatible inputs"""


class DomainError(HomogenizationError, ValueError):
    """Argument outside the mathematical domain of an operation"""


class StructuralError(HomogenizationError):
    """Fields or masks built on mismatched grids"""


class ContractViolation(HomogenizationError):
    """A documented precondition on field values does not hold"""


class NumericalError(HomogenizationError):
    """NaN, breakdown or an inconsistent right-hand side"""


class SolverError(HomogenizationError):
    """
    An iterative solve did not converge.

    The report (a LinearSolveReport or a diagnostics dict) is kept on the
    exception so callers can write it into a partial report.
    """

    def __init__(self, message: str, report: Optional[Any] = None):
        super().__init__(message)
        self.report = report

    def diagnostics(self) -> Dict[str, Any]:
        if self.report is None:
            return {}
        if hasattr(self.report, "model_dump"):
            return self.report.model_dump()
        return dict(self.report)


class DegenerateProblemError(SolverError):
    """The problem has no solution for the given data (e.g. cell without a hole)"""


class MicroStepError(SolverError):
    """Picard iteration of a micro time step failed"""
