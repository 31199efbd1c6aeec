"""Exception types raised across the package."""


class CuspflowError(Exception):
    """Base class for all package errors."""


class NonConvergence(CuspflowError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class PositivityLoss(CuspflowError):
    pass


class SingularInverse(CuspflowError):
    pass


class SingularInput(CuspflowError):
    pass


class IllConditioned(CuspflowError):
    pass


class SingularStability(CuspflowError):
    pass


class EmptySupport(CuspflowError):
    pass


class AmbiguousExponent(CuspflowError):
    def __init__(self, message, slope=float("nan")):
        super().__init__(f"{message} (raw slope {slope:.4f})")
        self.slope = slope


class NotInGap(CuspflowError):
    pass


class NoSignChange(CuspflowError):
    pass


class FlowExitsDomain(CuspflowError):
    def __init__(self, message, last_sample=None):
        super().__init__(message)
        self.last_sample = last_sample


class GapClosed(CuspflowError):
    pass


class FrontExceedsGap(CuspflowError):
    pass


class NotFull(CuspflowError):
    pass


class NotFullEnough(CuspflowError):
    pass


class QuadratureNotConverged(CuspflowError):
    def __init__(self, message, change=float("nan")):
        super().__init__(f"{message} (doubling change {change:.3e})")
        self.change = change


class TooFewPoints(CuspflowError):
    pass


class PoorFit(CuspflowError):
    def __init__(self, message, r2=float("nan")):
        super().__init__(f"{message} (R^2 = {r2:.4f})")
        self.r2 = r2


class InsufficientData(CuspflowError):
    pass


class ConfigError(CuspflowError):
    pass
