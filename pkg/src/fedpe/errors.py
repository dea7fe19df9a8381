"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid algorithm, schedule or experiment configuration."""


class ProtocolError(RuntimeError):
    """The client/server protocol reached an inconsistent state."""


class InstanceError(ValueError):
    """A bandit instance violates its invariants or cannot be parsed."""


class GenerationError(RuntimeError):
    """Synthetic instance generation exhausted its retry budget."""


class InvalidLogError(ValueError):
    """A pull log references an arm that does not exist."""
