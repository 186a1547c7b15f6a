"""Named synthetic-data presets for quick experiments and acceptance runs.

``easy``    four domains with identical feature distributions (no shift).
``hard``    strong domain shift; out-of-distribution evaluation is hard.
``overfit`` tiny training sets, strong shift and a noisy teacher; paired
            with two hidden layers it reliably overfits, which is the regime
            the regularization ladder is meant to fix.
"""

from __future__ import annotations

from .data import SynthConfig
from .trainer import TrainConfig

_RATES_12 = (0.5, 0.4, 0.35, 0.3, 0.25, 0.2, 0.45, 0.15, 0.3, 0.25, 0.2, 0.35)
_RATES_8 = (0.5, 0.35, 0.25, 0.15, 0.4, 0.3, 0.2, 0.45)


def synth_preset(name: str, seed: int = 0) -> SynthConfig:
    if name == "easy":
        return SynthConfig(
            domains=4,
            train_per_domain=500,
            val_per_domain=150,
            test_per_domain=150,
            feature_dim=16,
            domain_shift=0.0,
            positive_rates=_RATES_12,
            teacher_noise=0.1,
            seed=seed,
        )
    if name == "hard":
        return SynthConfig(
            domains=4,
            train_per_domain=500,
            val_per_domain=150,
            test_per_domain=150,
            feature_dim=16,
            domain_shift=4.0,
            positive_rates=_RATES_12,
            teacher_noise=0.4,
            seed=seed,
        )
    if name == "overfit":
        return SynthConfig(
            domains=4,
            train_per_domain=120,
            val_per_domain=60,
            test_per_domain=250,
            feature_dim=16,
            domain_shift=3.0,
            positive_rates=_RATES_8,
            teacher_noise=0.6,
            seed=seed,
        )
    raise ValueError(f"unknown synth preset {name!r}")


def overfit_train_config(seed: int = 0, **overrides) -> TrainConfig:
    """Training configuration matched to the ``overfit`` preset: two hidden
    layers, higher learning rate, recognition-metric selection."""
    base = dict(
        lr=1e-3,
        weight_decay=0.0,
        batch_size=32,
        epochs=40,
        alpha=0.0,
        dropout_rate=0.0,
        ema_enabled=False,
        optimizer="adam",
        augment="none",
        selection_metric="mA",
        hidden_layers=(64, 64),
        seed=seed,
    )
    base.update(overrides)
    return TrainConfig(**base)
