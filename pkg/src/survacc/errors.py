"""Exception types shared across the package.

Two failure categories are distinguished so callers (and the CLI exit
codes) can tell malformed input apart from estimation that is undefined
on otherwise valid data.
"""


class DataError(ValueError):
    """Invalid or inconsistent input data / parameters."""


class EstimationError(RuntimeError):
    """Estimator is undefined or degenerate on the given data."""
