class DepcaError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(DepcaError, ValueError):
    pass


class SingularityError(DepcaError, ArithmeticError):
    pass


class NumericalError(DepcaError, ArithmeticError):
    pass


class FeasibilityError(DepcaError, ValueError):
    pass


class DimensionError(DepcaError, ValueError):
    pass


class GridError(DepcaError, ValueError):
    pass


class EstimationError(DepcaError, RuntimeError):
    pass


class MatrixFileError(DepcaError, IOError):
    pass


class ConfigError(DepcaError, ValueError):
    pass
