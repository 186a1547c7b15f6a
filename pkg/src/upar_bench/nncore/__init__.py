"""Self-contained numeric core: model, losses, optimizers, augmentation."""

from .augment import (
    MixAugmentParams,
    RandomErasingParams,
    default_mix_ops,
    mix_augment,
    random_erasing,
)
from .losses import (
    LossWeights,
    SmoothingConfig,
    loss_weights_from_stats,
    smooth_labels,
    unit_weights,
    weighted_bce,
)
from .model import (
    ClassifierHead,
    backward,
    forward,
    global_avg_pool,
    init_classifier_head,
    load_checkpoint,
    save_checkpoint,
    sigmoid,
)
from .optim import (
    EmaState,
    OptimizerState,
    SchedulerState,
    adamw_step,
    clip_grad_norm,
    ema_update,
    init_ema,
    init_optimizer,
    plateau_step,
)

__all__ = [
    "ClassifierHead",
    "EmaState",
    "LossWeights",
    "MixAugmentParams",
    "OptimizerState",
    "RandomErasingParams",
    "SchedulerState",
    "SmoothingConfig",
    "adamw_step",
    "backward",
    "clip_grad_norm",
    "default_mix_ops",
    "ema_update",
    "forward",
    "global_avg_pool",
    "init_classifier_head",
    "init_ema",
    "init_optimizer",
    "load_checkpoint",
    "loss_weights_from_stats",
    "mix_augment",
    "plateau_step",
    "random_erasing",
    "save_checkpoint",
    "sigmoid",
    "smooth_labels",
    "unit_weights",
    "weighted_bce",
]
