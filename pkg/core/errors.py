class RecycleError(Exception):
    """Base error; `exit_code` is what the CLI returns for it"""

    exit_code = 1


class ConfigError(RecycleError):
    exit_code = 2


class DataError(RecycleError):
    exit_code = 3


class CheckpointFormatError(DataError):
    """Raised for unreadable or unwritable checkpoint files"""


class IncompatibleError(DataError):
    """Checkpoints whose block names or shapes do not line up"""


class AnalysisError(DataError):
    pass
