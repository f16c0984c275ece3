"""Exception hierarchy shared across the package."""


class LGSTimeError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(LGSTimeError, ValueError):
    pass


class EmptyInputError(LGSTimeError, ValueError):
    pass


class InsufficientDataError(LGSTimeError, ValueError):
    pass


class StaleTapeError(LGSTimeError, RuntimeError):
    pass


class DegenerateRowError(LGSTimeError, ValueError):
    """Raised when a softmax row has no unmasked entry."""


class IncompleteGradientError(LGSTimeError, KeyError):
    pass


class ValidationError(LGSTimeError, ValueError):
    """Bad configuration, schema or experiment spec."""
