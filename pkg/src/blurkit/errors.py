"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """Invalid configuration, checkpoint, or argument value. CLI exit code 2."""


class ShapeError(ValueError):
    """Array/tensor dimensions do not satisfy an operation's contract."""
