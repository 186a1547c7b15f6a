"""Training loop, per-epoch validation, protocol execution, ablation ladder.

One training run: seeded shuffle -> optional augmentation -> forward with
dropout -> label smoothing -> weighted cross-entropy -> backprop -> gradient
clipping -> optimizer step -> EMA update.  At every epoch end both the raw
and the EMA parameters are validated; the better value of the configured
selection metric drives the plateau scheduler and checkpoint selection.
Validation rows always come from the training domains, so CV/LOO evaluation
domains stay fully unseen until test time.

Everything is bit-deterministic given (config, data): RNG streams are derived
from the config seed, per-split seeds are ``seed + split id``, and reduction
orders are fixed.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nncore
from .data import (
    EmptySelection,
    FeatureMatrix,
    LabelMatrix,
    SplitSpec,
    active_attributes,
    all_split,
    attribute_stats,
    features_for,
    rotated_splits,
    select,
    upar_split_presets,
    CANONICAL_DOMAINS,
)
from .metrics import (
    ConfidenceMatrix,
    MetricReport,
    ProtocolReport,
    SplitResult,
    aggregate_protocol,
    aggregate_split,
    binarize,
    format_mean_std,
    report_from_predictions,
)
from .retrieval import evaluate_retrieval
from .schema import AttributeSchema

_SELECTION_KEYS = {"mAP": "mAP", "mA": "mA", "f1": "instance_f1"}

_MARKDOWN_COLUMNS = (("mA", "mA"), ("instance_f1", "F1"), ("map", "mAP"), ("rank1", "R-1"))


class NonFiniteLossError(RuntimeError):
    """Training diverged: the loss or the logits stopped being finite."""


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 5e-4
    batch_size: int = 64
    epochs: int = 30
    alpha: float = 0.05  # label smoothing; 0.1 suits small training sets
    dropout_rate: float = 0.5
    ema_enabled: bool = True
    ema_decay: float = 0.999
    optimizer: str = "adamw"  # adam or adamw
    clip_norm: float = 10.0
    patience: int = 4
    lr_factor: float = 0.1
    min_lr: float = 1e-7
    augment: str = "none"  # none, re, mix or re+mix
    seed: int = 0
    selection_metric: str = "mAP"  # mAP, mA or f1
    hidden_layers: tuple[int, ...] = ()
    batch_size_search: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in ("adam", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.selection_metric not in _SELECTION_KEYS:
            raise ValueError(f"unknown selection metric {self.selection_metric!r}")
        if self.augment not in ("none", "re", "mix", "re+mix"):
            raise ValueError(f"unknown augmentation {self.augment!r}")

    def to_json_dict(self) -> dict:
        out = asdict(self)
        out["hidden_layers"] = list(self.hidden_layers)
        if self.batch_size_search is not None:
            out["batch_size_search"] = list(self.batch_size_search)
        return out


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    lr: float
    val_raw: dict[str, float]
    val_ema: dict[str, float] | None
    wall_time: float  # informational only; never serialized

    def to_json_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "lr": self.lr,
            "val_raw": self.val_raw,
            "val_ema": self.val_ema,
        }


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_source: str = "raw"
    best_value: float = float("-inf")

    def to_json_dict(self) -> dict:
        return {
            "best_epoch": self.best_epoch,
            "best_source": self.best_source,
            "best_value": self.best_value,
            "epochs": [r.to_json_dict() for r in self.records],
        }


def predict_confidences(model: nncore.ClassifierHead, x: np.ndarray) -> np.ndarray:
    logits, _ = nncore.forward(model, x, train_mode=False)
    return nncore.sigmoid(logits)


def evaluate(
    model: nncore.ClassifierHead,
    features: FeatureMatrix,
    labels: LabelMatrix,
    mask: np.ndarray,
    threshold: float = 0.5,
    with_retrieval: bool = False,
    schema: AttributeSchema | None = None,
) -> MetricReport:
    """Eval-mode forward, sigmoid confidences, binarize, recognition metrics,
    plus retrieval mAP/Rank-1 when requested."""
    mask = np.asarray(mask, dtype=bool)
    if labels.n_instances == 0:
        raise EmptySelection("evaluate needs a non-empty selection")
    if not mask.any():
        raise ValueError("mask excludes every attribute")
    x = features_for(features, labels)
    scores = predict_confidences(model, x)
    conf = ConfidenceMatrix(list(labels.instance_ids), scores)
    pred = binarize(conf, threshold)
    names = schema.names if schema is not None else None
    report = report_from_predictions(pred, labels, mask, names)
    if with_retrieval:
        rr = evaluate_retrieval(labels, conf, mask)
        report.map = rr.map
        report.rank1 = rr.rank1
    return report


def _augmenters(config: TrainConfig):
    use_re = config.augment in ("re", "re+mix")
    use_mix = config.augment in ("mix", "re+mix")
    re_params = nncore.RandomErasingParams(probability=0.5, area=(0.05, 0.25), fill=0.0)
    mix_params = nncore.MixAugmentParams()
    mix_ops = nncore.default_mix_ops(seed=config.seed) if use_mix else None
    return use_re, use_mix, re_params, mix_params, mix_ops


def _augment_batch(xb, config, rng, use_re, use_mix, re_params, mix_params, mix_ops):
    """Mixing first, then erasing, row by row; feature rows are treated as
    1 x 1 x D maps for the erasing rectangle."""
    out = xb
    if use_mix:
        out = np.stack(
            [nncore.mix_augment(row, mix_ops, mix_params, rng) for row in out]
        )
    if use_re:
        dim = out.shape[1]
        out = np.stack(
            [
                nncore.random_erasing(row.reshape(1, 1, dim), re_params, rng).reshape(dim)
                for row in out
            ]
        )
    return out


def _val_metrics(model, x_val, val_labels, mask, threshold, need_retrieval):
    scores = predict_confidences(model, x_val)
    conf = ConfidenceMatrix(list(val_labels.instance_ids), scores)
    pred = binarize(conf, threshold)
    report = report_from_predictions(pred, val_labels, mask)
    out = {"mA": report.mA, "instance_f1": report.instance_f1}
    if need_retrieval:
        rr = evaluate_retrieval(val_labels, conf, mask)
        out["mAP"] = rr.map
        out["rank1"] = rr.rank1
    return out


def train(
    train_features: FeatureMatrix,
    train_labels: LabelMatrix,
    val_features: FeatureMatrix,
    val_labels: LabelMatrix,
    schema: AttributeSchema | None,
    mask: np.ndarray,
    config: TrainConfig,
    threshold: float = 0.5,
) -> tuple[nncore.ClassifierHead, nncore.EmaState | None, TrainHistory]:
    """Train a classifier head; returns the best-validation checkpoint.

    The returned head carries the parameters of the epoch/source (raw or EMA)
    with the best validation selection metric.
    """
    mask = np.asarray(mask, dtype=bool)
    if train_labels.n_instances == 0:
        raise EmptySelection("empty training selection")
    if val_labels.n_instances == 0:
        raise EmptySelection("empty validation selection")
    if not mask.any():
        raise ValueError("mask excludes every attribute")

    x_train = features_for(train_features, train_labels)
    x_val = features_for(val_features, val_labels)
    y_train = train_labels.labels.astype(np.float64)
    n, dim = x_train.shape
    n_attr = train_labels.n_attributes

    rng_init = np.random.default_rng([config.seed, 0])
    rng_shuffle = np.random.default_rng([config.seed, 1])
    rng_dropout = np.random.default_rng([config.seed, 2])
    rng_augment = np.random.default_rng([config.seed, 3])

    model = nncore.init_classifier_head(
        dim, n_attr, config.hidden_layers, config.dropout_rate, rng_init
    )
    params = model.parameters()
    opt = nncore.init_optimizer(
        params, lr=config.lr, weight_decay=config.weight_decay, mode=config.optimizer
    )
    ema = nncore.init_ema(params, config.ema_decay) if config.ema_enabled else None
    sched = nncore.SchedulerState(
        current_lr=config.lr,
        patience=config.patience,
        factor=config.lr_factor,
        min_lr=config.min_lr,
    )
    smoothing = nncore.SmoothingConfig(config.alpha)
    weights = nncore.loss_weights_from_stats(attribute_stats(train_labels))
    selection_key = _SELECTION_KEYS[config.selection_metric]
    need_retrieval = selection_key == "mAP"
    use_re, use_mix, re_params, mix_params, mix_ops = _augmenters(config)

    eval_model = nncore.ClassifierHead(
        [w.copy() for w in model.weights], [b.copy() for b in model.biases], 0.0
    )

    history = TrainHistory()
    best_params: list[np.ndarray] | None = None

    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = rng_shuffle.permutation(n)
        opt.lr = sched.current_lr
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = x_train[idx]
            if use_re or use_mix:
                xb = _augment_batch(
                    xb, config, rng_augment, use_re, use_mix, re_params, mix_params, mix_ops
                )
            logits, cache = nncore.forward(model, xb, train_mode=True, rng=rng_dropout)
            targets = nncore.smooth_labels(y_train[idx], smoothing)
            try:
                loss, grad_logits = nncore.weighted_bce(logits, targets, weights, mask)
            except FloatingPointError as exc:
                raise NonFiniteLossError(
                    f"epoch {epoch}, batch at row {start}: {exc}"
                ) from exc
            if not np.isfinite(loss):
                raise NonFiniteLossError(f"epoch {epoch}, batch at row {start}: loss={loss}")
            grads = nncore.backward(model, cache, grad_logits)
            nncore.clip_grad_norm(grads, config.clip_norm)
            nncore.adamw_step(params, grads, opt)
            if ema is not None:
                nncore.ema_update(ema, params)
            loss_sum += loss * len(idx)

        eval_model.set_parameters(params)
        val_raw = _val_metrics(eval_model, x_val, val_labels, mask, threshold, need_retrieval)
        val_ema = None
        if ema is not None:
            eval_model.set_parameters(ema.shadow)
            val_ema = _val_metrics(
                eval_model, x_val, val_labels, mask, threshold, need_retrieval
            )

        candidates = [("raw", val_raw[selection_key])]
        if val_ema is not None:
            candidates.append(("ema", val_ema[selection_key]))
        epoch_source, epoch_value = max(candidates, key=lambda c: c[1])
        if epoch_value > history.best_value:
            history.best_value = epoch_value
            history.best_epoch = epoch
            history.best_source = epoch_source
            source = params if epoch_source == "raw" else ema.shadow
            best_params = [p.copy() for p in source]

        history.records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=loss_sum / n,
                lr=sched.current_lr,
                val_raw=val_raw,
                val_ema=val_ema,
                wall_time=time.perf_counter() - started,
            )
        )

        at_floor = sched.current_lr <= config.min_lr
        reductions_before = sched.num_reductions
        nncore.plateau_step(sched, epoch_value, higher_is_better=True)
        if sched.num_reductions > reductions_before and at_floor:
            break  # LR already at its floor and still plateaued

    best = nncore.ClassifierHead(
        [w.copy() for w in model.weights],
        [b.copy() for b in model.biases],
        config.dropout_rate,
    )
    if best_params is not None:
        best.set_parameters(best_params)
    return best, ema, history


def _train_with_bs_search(train_fm, train_lm, val_fm, val_lm, schema, mask, config, threshold):
    """Train once per candidate batch size, keep the best validation result."""
    candidates = config.batch_size_search or (config.batch_size,)
    best = None
    for bs in candidates:
        cfg = replace(config, batch_size=int(bs), batch_size_search=None)
        model, ema, history = train(
            train_fm, train_lm, val_fm, val_lm, schema, mask, cfg, threshold
        )
        if best is None or history.best_value > best[2].best_value:
            best = (model, ema, history, int(bs))
    return best


def splits_for(protocol: str, domains) -> list[SplitSpec]:
    """Preset splits for the canonical domain set, rotation otherwise."""
    protocol = protocol.upper()
    if protocol == "ALL":
        return [all_split(domains)]
    if set(domains) == set(CANONICAL_DOMAINS):
        return upar_split_presets(protocol)
    return rotated_splits(protocol, domains)


def run_protocol(
    protocol: str,
    features: FeatureMatrix,
    labels: LabelMatrix,
    schema: AttributeSchema | None,
    config: TrainConfig,
    splits: list[SplitSpec] | None = None,
    threshold: float = 0.5,
    with_retrieval: bool = True,
    include_train_eval: bool = False,
    collect_confidences: dict | None = None,
    collect_models: dict | None = None,
) -> ProtocolReport:
    """Run every split of a protocol and aggregate the per-split averages.

    Per split: the active-attribute mask comes from the training partition of
    the training domains and is shared by the loss, validation, test metrics
    and retrieval queries.  Each evaluation domain's test rows are scored
    separately; the ALL protocol evaluates the combined test set.  When
    `collect_confidences` is a dict it receives ``(split_id, domain) ->
    ConfidenceMatrix`` entries for export; `collect_models` likewise receives
    ``split_id -> (ClassifierHead, chosen_batch_size)``.
    """
    protocol = protocol.upper()
    if splits is None:
        splits = splits_for(protocol, labels.domain_set())
    missing = set().union(*(s.train_domains | s.eval_domains for s in splits)) - labels.domain_set()
    if missing:
        raise EmptySelection(f"domains missing from the data: {sorted(missing)}")

    split_results = []
    for split in sorted(splits, key=lambda s: s.id):
        cfg = replace(config, seed=config.seed + split.id)
        mask = active_attributes(split, labels)
        train_lm = select(labels, split.train_domains, "train")
        val_lm = select(labels, split.train_domains, "val")
        model, ema, history, chosen_bs = _train_with_bs_search(
            features, train_lm, features, val_lm, schema, mask, cfg, threshold
        )
        if collect_models is not None:
            collect_models[split.id] = (model, chosen_bs)

        per_dataset = {}
        eval_domains = sorted(split.eval_domains)
        if protocol == "ALL":
            eval_selections = [("ALL", select(labels, split.eval_domains, "test"))]
        else:
            eval_selections = [(d, select(labels, {d}, "test")) for d in eval_domains]
        for name, test_lm in eval_selections:
            report = evaluate(
                model, features, test_lm, mask, threshold, with_retrieval, schema
            )
            per_dataset[name] = report
            if collect_confidences is not None:
                x = features_for(features, test_lm)
                collect_confidences[(split.id, name)] = ConfidenceMatrix(
                    list(test_lm.instance_ids), predict_confidences(model, x)
                )

        train_report = None
        if include_train_eval:
            train_report = evaluate(
                model, features, train_lm, mask, threshold, False, schema
            )

        split_results.append(
            SplitResult(
                split_id=split.id,
                train_domains=sorted(split.train_domains),
                eval_domains=eval_domains,
                per_dataset=per_dataset,
                average=aggregate_split([per_dataset[k] for k in sorted(per_dataset)]),
                selected_source=history.best_source,
                train_report=train_report,
                history=[r.to_json_dict() for r in history.records]
                + [{"chosen_batch_size": chosen_bs}],
            )
        )

    means, stds = aggregate_protocol([s.average for s in split_results])
    return ProtocolReport(
        protocol=protocol,
        per_split=split_results,
        protocol_mean=means,
        protocol_std=stds,
        config={"threshold": threshold, "train": config.to_json_dict()},
    )


# Cumulative regularization ladder mirroring the strong-baseline build-up.
DEFAULT_LADDER: tuple[tuple[str, dict], ...] = (
    ("+ EMA", {"ema_enabled": True}),
    ("+ optimal BS", {"batch_size_search": (32, 64)}),
    ("+ dropout", {"dropout_rate": 0.5}),
    ("+ label smoothing", {"alpha": 0.1}),
    ("+ AdamW", {"optimizer": "adamw"}),
    ("+ mix augment", {"augment": "mix"}),
)


def baseline_config(config: TrainConfig) -> TrainConfig:
    """Strip every ladder regularizer off a config."""
    return replace(
        config,
        ema_enabled=False,
        batch_size_search=None,
        dropout_rate=0.0,
        alpha=0.0,
        optimizer="adam",
        augment="none",
    )


@dataclass
class AblationReport:
    protocol: str
    rows: list[tuple[str, ProtocolReport]]

    def to_json_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "rows": [{"name": name, "report": rep.to_json_dict()} for name, rep in self.rows],
        }

    def to_markdown(self) -> str:
        if not self.rows:
            return ""
        first = self.rows[0][1]
        keys = [k for k, _ in _MARKDOWN_COLUMNS if k in first.protocol_mean]
        labels = [label for k, label in _MARKDOWN_COLUMNS if k in first.protocol_mean]
        lines = [
            "| Configuration | " + " | ".join(labels) + " |",
            "|" + "---|" * (len(labels) + 1),
        ]
        for name, rep in self.rows:
            cells = [
                format_mean_std(rep.protocol_mean[k], rep.protocol_std[k]) for k in keys
            ]
            lines.append("| " + name + " | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def ablate(
    base_config: TrainConfig,
    ladder,
    protocol: str,
    features: FeatureMatrix,
    labels: LabelMatrix,
    schema: AttributeSchema | None = None,
    threshold: float = 0.5,
    with_retrieval: bool = True,
) -> AblationReport:
    """Run the protocol once per cumulative ladder rung, baseline first."""
    if ladder is None:
        ladder = DEFAULT_LADDER
    rows = []
    cfg = baseline_config(base_config)
    rows.append(
        (
            "baseline",
            run_protocol(
                protocol, features, labels, schema, cfg, threshold=threshold,
                with_retrieval=with_retrieval,
            ),
        )
    )
    for name, overrides in ladder:
        cfg = replace(cfg, **overrides)
        rows.append(
            (
                name,
                run_protocol(
                    protocol, features, labels, schema, cfg, threshold=threshold,
                    with_retrieval=with_retrieval,
                ),
            )
        )
    return AblationReport(protocol=protocol.upper(), rows=rows)
