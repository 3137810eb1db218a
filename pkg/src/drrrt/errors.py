"""Exception types raised by the planner toolkit."""


class ConfigurationError(ValueError):
    """Invalid model data: bad dimensions, non-PSD covariance, out-of-range parameters."""


class ScenarioInfeasibleError(RuntimeError):
    """The scenario admits no valid sample (e.g. obstacles cover the workspace)."""


class TreeFormatError(ValueError):
    """A serialized tree dump could not be parsed."""
