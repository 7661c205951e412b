"""Exception types raised across the package."""


class IpvaError(Exception):
    """Base class for all package errors."""


class ConfigError(IpvaError, ValueError):
    """Invalid configuration value or parameter set.

    ``field`` names the offending key when one can be identified.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class NumericalError(IpvaError, ArithmeticError):
    """Base class for numerical failures (CLI exit code 3)."""


class LinearSolveFailure(NumericalError):
    pass


class NonFiniteState(NumericalError):
    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)


class EmptyTrajectory(IpvaError, ValueError):
    pass


class TooShort(IpvaError, ValueError):
    pass


class IndexOutOfRange(IpvaError, IndexError):
    pass


class ConstraintViolation(IpvaError, ValueError):
    pass


class NotConverged(NumericalError):
    pass


class SingularInertia(NumericalError):
    pass


class RepairNotConverged(NumericalError):
    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


class SolverStalled(NumericalError):
    pass


class NonFiniteRollout(NumericalError):
    pass


class Infeasible(NumericalError):
    pass


class SubproblemFailure(NumericalError):
    pass


class NonFiniteEstimate(NumericalError):
    pass


class DegenerateInversion(NumericalError):
    pass
