"""Exception types shared across the toolkit."""


class TricoverError(Exception):
    """Base class for all structured toolkit errors."""


class ShapeError(TricoverError):
    """Tensor or layer shapes inconsistent with what the model declares."""


class NumericError(TricoverError):
    """A computation produced or received a non-finite value."""


class ModelFileError(TricoverError):
    """Model exchange file is malformed or violates its own manifest."""


class DatasetError(TricoverError):
    """IDX dataset file is malformed, or image/label files disagree."""


class CoverageError(TricoverError):
    """Coverage registry, state, and trace do not belong together."""


class ObjectiveError(TricoverError):
    """Objective references an invalid neuron, model, or configuration."""


class OracleError(TricoverError):
    """Differential-oracle preconditions not met."""


class ConfigError(TricoverError):
    """Campaign configuration is invalid or inconsistent."""
