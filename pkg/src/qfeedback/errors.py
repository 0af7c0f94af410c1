"""Exception hierarchy shared by all submodules."""


class QFeedbackError(Exception):
    """Base class for package errors."""


class ConfigError(QFeedbackError, ValueError):
    """Invalid grid, model or simulation configuration."""


class UsageError(QFeedbackError, ValueError):
    """A function was called outside its preconditions (shapes, traces, budgets)."""


class IntegrationError(QFeedbackError, RuntimeError):
    """A propagator step produced an unphysical state (norm collapse, negativity, NaN)."""


class FilterDivergence(QFeedbackError, RuntimeError):
    """An observer lost positivity of its second moments."""
