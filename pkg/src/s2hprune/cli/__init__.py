"""Configuration, checkpoints, trajectory logging and the command-line driver."""

from .checkpoint import (
    Checkpoint,
    CheckpointError,
    CheckpointFormatError,
    CheckpointHashError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    load_checkpoint,
    restore_trainer,
    save_checkpoint,
    save_trainer,
)
from .config import RunConfigFile, config_from_dict, parse_config
from .trajectory import log_trajectory, read_trajectory
