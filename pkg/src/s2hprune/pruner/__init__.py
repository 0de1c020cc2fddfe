"""Soft-to-hard pruning engine: per-step gradients, updates and training loops."""

from .config import MODES, ConfigError, PruneRunConfig, Toggles
from .optim import SGD, ScheduleError, lr_schedule, sgd_momentum_step
from .step import (
    GradientBundle,
    StepError,
    StepResult,
    apply_updates,
    balance_mask_gradients,
    combine_gradients,
    prune_step,
    resource_penalty,
)
from .trainer import (
    Pruner,
    RunResult,
    SupervisedTrainer,
    TrajectoryRecord,
    check_feasible,
    evaluate,
    run_experiment,
)
