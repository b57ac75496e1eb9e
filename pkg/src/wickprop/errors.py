"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to.
"""


class WickpropError(Exception):
    exit_code = 1


class ConfigurationError(WickpropError, ValueError):
    """Invalid combination of settings (basis kind/size, grid alignment, config keys)."""

    exit_code = 2


class ParameterError(WickpropError, ValueError):
    exit_code = 2


class ShapeError(WickpropError, ValueError):
    exit_code = 2


class DomainError(WickpropError, ValueError):
    exit_code = 2


class StructuralError(WickpropError, ValueError):
    exit_code = 2


class CapacityError(WickpropError):
    exit_code = 4


class NumericalError(WickpropError, ArithmeticError):
    exit_code = 3


class BlowupError(NumericalError):
    """Non-finite state encountered while time stepping."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


class RankDeficiencyError(NumericalError):
    pass


class ConditioningError(NumericalError):
    def __init__(self, condition_number, message=None):
        self.condition_number = condition_number
        super().__init__(message or f"ill-conditioned dictionary (Gram condition number {condition_number:.3e})")


class EmptyDataError(WickpropError, ValueError):
    exit_code = 3


class UndefinedMetricError(NumericalError):
    pass


class DegenerateEnsembleError(NumericalError):
    pass
