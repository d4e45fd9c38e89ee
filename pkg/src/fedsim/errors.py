"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """A configuration, shape, or precondition problem the caller can fix."""


class IngestionError(ValueError):
    """A dataset file is missing, malformed, or violates the schema."""
