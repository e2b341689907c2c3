"""Exception hierarchy shared by every module of the package."""


class StabilityError(Exception):
    """Base class for all errors raised by poincare_stability."""


class InvalidParameter(StabilityError, ValueError):
    pass


class InvalidDomain(StabilityError, ValueError):
    pass


class NotStrictlyConvex(StabilityError, ValueError):
    pass


class AssumptionViolation(StabilityError, ValueError):
    """h vanishes (or turns negative) in the interior of the interval."""


class NumericalFailure(StabilityError, RuntimeError):
    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ModelNotNormalizable(StabilityError, RuntimeError):
    pass


class InvariantViolation(StabilityError, AssertionError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class DegenerateDirection(StabilityError, ValueError):
    pass


class DegenerateMeasure(StabilityError, RuntimeError):
    pass


class NoGapDetected(StabilityError, RuntimeError):
    pass


class ConstantTestFunction(StabilityError, ValueError):
    pass


class InvalidCDF(StabilityError, ValueError):
    pass


class InvalidDensity(StabilityError, ValueError):
    pass
