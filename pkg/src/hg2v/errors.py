class HG2VError(Exception):
    """Base class for every error raised by the toolkit."""


class DataError(HG2VError):
    """Malformed or missing input data (ingestion, file formats)."""


class ShapeError(HG2VError, ValueError):
    """Operand shapes violate an operation contract."""


class NumericalError(HG2VError, ArithmeticError):
    """Non-finite values or a solver that failed to converge."""
