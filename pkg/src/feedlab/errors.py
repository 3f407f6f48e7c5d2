"""Exception hierarchy shared across feedlab."""


class FeedlabError(Exception):
    """Base class for all feedlab errors."""


class ConfigurationError(FeedlabError):
    """Invalid run parameters or config file contents."""


class DataError(FeedlabError):
    """Input data cannot support the requested computation."""


class WindowingError(DataError):
    """Event log does not span the requested timeline windows."""


class DegenerateDataError(DataError):
    """Training labels contain a single class."""


class UndefinedMetricError(DataError):
    """Metric is undefined for the given inputs (e.g. single-class labels)."""


class SingularDesignError(DataError):
    """Design matrix is rank deficient; the closed-form solve has no unique solution."""


class SelectionError(DataError):
    """Could not select the requested number of experiment units."""

    def __init__(self, message: str, achievable: int | None = None):
        super().__init__(message)
        self.achievable = achievable


class ContractError(FeedlabError):
    """Caller violated an interface contract (e.g. feature schema mismatch)."""
