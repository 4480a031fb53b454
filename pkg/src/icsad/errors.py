"""Exception hierarchy shared by every icsad module.

Each class carries the CLI exit code that the command layer maps it to.
"""


class IcsadError(Exception):
    exit_code = 3


class ConfigError(IcsadError, ValueError):
    exit_code = 1


class DimensionError(ConfigError):
    """Shape mismatch between tensors or between a model and its data."""


class DataError(IcsadError, ValueError):
    exit_code = 2


class ParseError(DataError):
    pass


class TrainingError(IcsadError, RuntimeError):
    exit_code = 3


class ModelLoadError(IcsadError):
    exit_code = 2
