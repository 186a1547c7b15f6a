"""First-order optimization: Adam/AdamW, gradient clipping, EMA, plateau LR.

AdamW applies weight decay decoupled from the adaptive step; Adam folds it
into the gradient as classic L2.  The EMA shadow is updated after every
optimizer step, model first.  The plateau scheduler multiplies the learning
rate by `factor` once the validation metric has failed to improve for
`patience + 1` consecutive steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    mode: str = "adamw"  # adam or adamw
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    def __post_init__(self):
        if self.mode not in ("adam", "adamw"):
            raise ValueError(f"unknown optimizer mode {self.mode!r}")


def init_optimizer(
    params: list[np.ndarray],
    lr: float,
    weight_decay: float = 0.0,
    mode: str = "adamw",
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> OptimizerState:
    return OptimizerState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        weight_decay=weight_decay,
        mode=mode,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adamw_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState
) -> OptimizerState:
    """One bias-corrected moment update; parameters change in place."""
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("params/grads/state length mismatch")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.mode == "adam" and state.weight_decay != 0.0:
            g = g + state.weight_decay * p
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        delta = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if state.mode == "adamw" and state.weight_decay != 0.0:
            delta = delta + state.lr * state.weight_decay * p  # decay on pre-step value
        p -= delta
    return state


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Scale all gradients by max_norm/g when the global L2 norm g exceeds it."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return grads


@dataclass
class EmaState:
    shadow: list[np.ndarray]
    decay: float

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")


def init_ema(params: list[np.ndarray], decay: float) -> EmaState:
    """Shadow starts as a copy of the initial parameters."""
    return EmaState([p.copy() for p in params], decay)


def ema_update(ema: EmaState, params: list[np.ndarray]) -> EmaState:
    if len(ema.shadow) != len(params):
        raise ValueError("shadow/parameter length mismatch")
    d = ema.decay
    for s, p in zip(ema.shadow, params):
        s *= d
        s += (1.0 - d) * p
    return ema


@dataclass
class SchedulerState:
    current_lr: float
    patience: int = 4
    factor: float = 0.1
    min_lr: float = 0.0
    best_metric: float | None = None
    epochs_since_improvement: int = 0
    num_reductions: int = 0

    def __post_init__(self):
        if self.current_lr <= 0:
            raise ValueError("current_lr must be positive")


def plateau_step(
    state: SchedulerState, val_metric: float, higher_is_better: bool = True
) -> SchedulerState:
    """Record one validation result; reduce the LR on a full plateau.

    Improvement is strict.  After `patience + 1` consecutive non-improving
    results the LR is multiplied by `factor` (floored at `min_lr`) and the
    plateau counter restarts.
    """
    improved = state.best_metric is None or (
        val_metric > state.best_metric if higher_is_better else val_metric < state.best_metric
    )
    if improved:
        state.best_metric = val_metric
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
        if state.epochs_since_improvement > state.patience:
            state.current_lr = max(state.current_lr * state.factor, state.min_lr)
            state.num_reductions += 1
            state.epochs_since_improvement = 0
    return state
