"""Exception hierarchy shared by all weaver modules."""


class WeaverError(Exception):
    """Base class for every error raised by this package."""


class DatasetError(WeaverError, ValueError):
    """Input data is malformed or violates a dataset invariant."""


class PreprocessError(WeaverError, ValueError):
    pass


class FitError(WeaverError, RuntimeError):
    pass


class WeakSupervisionWarning(UserWarning):
    """Emitted when a label-model fit is legal but poorly conditioned."""
