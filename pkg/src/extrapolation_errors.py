"""Error taxonomy shared by every certificate module.

Validation errors map to CLI exit code 1, numerical failures to exit code 2.
"""


class ExtrapolationError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for this error."""

    exit_code = 1


# 输入校验类错误（exit 1）
class InvalidInput(ExtrapolationError, ValueError):
    pass


class ShapeMismatch(InvalidInput):
    pass


class Unsupported(InvalidInput):
    pass


class OrderTooLarge(InvalidInput):
    pass


class DegenerateCorrelation(InvalidInput):
    pass


class SeparationViolated(InvalidInput):
    pass


class ConfigError(InvalidInput):
    pass


class IoError(ExtrapolationError, OSError):
    pass


# 数值计算类错误（exit 2）
class NumericalFailure(ExtrapolationError, ArithmeticError):
    exit_code = 2


class NotPositiveDefinite(NumericalFailure):
    pass


class DegenerateDenominator(NumericalFailure):
    pass


class NonFiniteResult(NumericalFailure):
    pass


class DivergenceDetected(NumericalFailure):
    """Training loss or parameters became non-finite."""

    def __init__(self, message: str, last_finite_epoch: int = -1):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch
