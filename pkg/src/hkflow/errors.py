"""Exception types shared across the package.

Each error maps onto a process exit status used by the command line
front end (see :mod:`hkflow.cli`).
"""


class HKFlowError(Exception):
    exit_status = 1


class ConfigInvalid(HKFlowError, ValueError):
    exit_status = 2


class ShapeMismatch(HKFlowError, ValueError):
    exit_status = 2


class MetricDegenerate(HKFlowError, ArithmeticError):
    """Metric lost positive definiteness somewhere on the grid.

    ``location`` is the grid multi-index of the worst point and ``value`` the
    smallest eigenvalue (or determinant) found there. ``t`` is filled in by
    the integrators when the failure happens mid-run.
    """

    exit_status = 3

    def __init__(self, message, location=None, value=None, t=None):
        super().__init__(message)
        self.location = location
        self.value = value
        self.t = t


class NonFinite(HKFlowError, ArithmeticError):
    exit_status = 4


class CflViolation(HKFlowError, ValueError):
    exit_status = 2
