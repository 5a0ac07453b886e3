"""Exception hierarchy shared by every subsystem."""


class ArtrdError(Exception):
    """Base class for all errors raised by this package."""

    #: short category used for CLI exit codes and messages
    category = "error"
    exit_code = 1


class ContractViolation(ArtrdError, ValueError):
    """An operation was called with arguments that break its preconditions."""

    category = "contract"
    exit_code = 2


class ConfigurationError(ArtrdError, ValueError):
    """Invalid or infeasible configuration (bad keys, impossible d_G, ...)."""

    category = "config"
    exit_code = 3


class CheckpointError(ArtrdError):
    """Checkpoint file is unreadable or incompatible with the environment."""

    category = "checkpoint"
    exit_code = 4


class TrainingDivergedError(ArtrdError, FloatingPointError):
    """A NaN/inf showed up in a gradient during a PPO update."""

    category = "nan"
    exit_code = 5

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InsufficientDataError(ArtrdError, ValueError):
    """Not enough samples to compute a statistic."""

    category = "data"
    exit_code = 6
