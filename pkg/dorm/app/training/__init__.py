from .trainer import (
    TrainConfig,
    TrainLogRecord,
    TrainResult,
    build_optimizer,
    build_run_configs,
    lr_at,
    optimizer_update,
    run_training,
    train_step,
)

__all__ = [
    "TrainConfig",
    "TrainLogRecord",
    "TrainResult",
    "build_optimizer",
    "build_run_configs",
    "lr_at",
    "optimizer_update",
    "run_training",
    "train_step",
]
