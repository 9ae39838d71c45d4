"""Exception types shared across the package."""


class ShapeError(ValueError):
    """An operation received tensors with incompatible shapes."""


class GraphError(RuntimeError):
    """Misuse of the recorded computation graph (non-scalar loss,
    backward without a graph, repeated backward on a finished graph)."""


class ConfigError(ValueError):
    """Invalid model or run configuration."""


class DataError(ValueError):
    """Unreadable or malformed dataset content."""


class OptimizerError(RuntimeError):
    """Optimizer invoked in an invalid state (e.g. missing gradients)."""


class CheckpointError(RuntimeError):
    """Corrupt, incompatible, or mismatched checkpoint file."""
