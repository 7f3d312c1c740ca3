"""Exception hierarchy shared across the package."""


class SkemError(Exception):
    """Base class for all package errors."""


class CovarianceError(SkemError, ValueError):
    """A covariance matrix could not be Cholesky factorized."""

    def __init__(self, message, component=None, pass_number=None):
        super().__init__(message)
        self.component = component
        self.pass_number = pass_number


class DivergenceError(SkemError):
    """Training collapsed: a kernel lost all responsibility or parameters went non-finite."""

    def __init__(self, message, pass_number=None):
        super().__init__(message)
        self.pass_number = pass_number


class ModelFormatError(SkemError, ValueError):
    """A persisted model file is malformed."""


class IdxFormatError(SkemError, ValueError):
    """Base class for IDX container problems."""


class IdxMagicError(IdxFormatError):
    """Unexpected magic number in an IDX header."""


class IdxTruncatedError(IdxFormatError):
    """IDX payload shorter than its header promises."""


class IdxDimensionError(IdxFormatError):
    """IDX dimensions disagree with each other or with the 28x28 digit layout."""
