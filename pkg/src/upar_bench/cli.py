"""Batch command-line front end.

Subcommands: ``schema show|validate``, ``synth``, ``train``, ``protocol``,
``ablate``, ``eval``, ``retrieve``.  Every run with a ``--seed`` is
byte-reproducible, and every report embeds its fully resolved configuration.
The output directory defaults to ``--out``, then the ``UPAR_BENCH_OUT``
environment variable, then ``./runs``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data, metrics, nncore, presets, retrieval, trainer
from .schema import default_upar_schema, load_schema, save_schema, AttributeSchema, AttributeDef

_SELECT_METRIC_FLAGS = {"map": "mAP", "ma": "mA", "f1": "f1"}


def _resolve_out(args) -> Path:
    out = args.out or os.environ.get("UPAR_BENCH_OUT") or "runs"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require_file(path, what):
    if not Path(path).is_file():
        raise FileNotFoundError(f"{what} file not found: {path}")
    return path


def _load_schema_arg(args):
    if getattr(args, "schema", None):
        return load_schema(_require_file(args.schema, "schema"))
    return default_upar_schema()


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _add_train_flags(parser):
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--wd", type=float, default=None, help="weight decay")
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--alpha", type=float, default=None, help="label smoothing")
    parser.add_argument("--dropout", type=float, default=None)
    parser.add_argument("--ema", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--ema-decay", type=float, default=None)
    parser.add_argument("--optimizer", choices=("adam", "adamw"), default=None)
    parser.add_argument("--clip-norm", type=float, default=None)
    parser.add_argument("--patience", type=int, default=None)
    parser.add_argument("--lr-factor", type=float, default=None)
    parser.add_argument("--min-lr", type=float, default=None)
    parser.add_argument("--augment", choices=("none", "re", "mix", "re+mix"), default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument(
        "--select-metric", choices=tuple(_SELECT_METRIC_FLAGS), default=None
    )
    parser.add_argument("--hidden-layers", type=_int_tuple, default=None, metavar="W0,W1")
    parser.add_argument("--bs-search", type=_int_tuple, default=None, metavar="BS0,BS1")


def _train_config_from_args(args) -> trainer.TrainConfig:
    cfg = trainer.TrainConfig()
    updates = {
        "lr": args.lr,
        "weight_decay": args.wd,
        "batch_size": args.batch_size,
        "epochs": args.epochs,
        "alpha": args.alpha,
        "dropout_rate": args.dropout,
        "ema_enabled": args.ema,
        "ema_decay": args.ema_decay,
        "optimizer": args.optimizer,
        "clip_norm": args.clip_norm,
        "patience": args.patience,
        "lr_factor": args.lr_factor,
        "min_lr": args.min_lr,
        "augment": args.augment,
        "seed": args.seed,
        "selection_metric": None
        if args.select_metric is None
        else _SELECT_METRIC_FLAGS[args.select_metric],
        "hidden_layers": args.hidden_layers,
        "batch_size_search": args.bs_search,
    }
    return replace(cfg, **{k: v for k, v in updates.items() if v is not None})


def _load_dataset(args):
    schema = _load_schema_arg(args)
    labels = data.load_manifest(_require_file(args.manifest, "manifest"), schema)
    features = data.load_features(_require_file(args.features, "features"))
    return schema, labels, features


def _load_aligned_confidences(args, schema):
    labels = data.load_manifest(_require_file(args.manifest, "manifest"), schema)
    conf = metrics.load_confidences(_require_file(args.confidences, "confidences"), schema)
    if conf.instance_ids != labels.instance_ids:
        n = min(len(conf.instance_ids), len(labels.instance_ids))
        for i in range(n):
            if conf.instance_ids[i] != labels.instance_ids[i]:
                raise data.AlignmentError(
                    f"confidence row {i + 1} has id {conf.instance_ids[i]!r} "
                    f"but manifest has {labels.instance_ids[i]!r}"
                )
        raise data.AlignmentError(
            f"confidence file has {len(conf.instance_ids)} rows, "
            f"manifest has {len(labels.instance_ids)}"
        )
    return labels, conf


def cmd_schema(args) -> int:
    schema = _load_schema_arg(args)
    if args.action == "show":
        for cat in schema.categories:
            for attr in schema.attributes:
                if attr.category == cat:
                    print(f"{cat}\t{attr.name}")
        return 0
    # validate
    data.load_manifest(_require_file(args.manifest, "manifest"), schema)
    print(f"ok: {args.manifest} conforms to the schema")
    return 0


def _synth_config_from_args(args) -> data.SynthConfig:
    if args.preset:
        cfg = presets.synth_preset(args.preset, seed=args.seed if args.seed is not None else 0)
    else:
        cfg = data.SynthConfig()
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
    updates = {
        "domains": args.domains,
        "train_per_domain": args.train_per_domain,
        "val_per_domain": args.val_per_domain,
        "test_per_domain": args.test_per_domain,
        "feature_dim": args.feature_dim,
        "domain_shift": args.domain_shift,
        "teacher_noise": args.teacher_noise,
    }
    if args.rates:
        updates["positive_rates"] = tuple(float(v) for v in args.rates.split(","))
    cfg = replace(cfg, **{k: v for k, v in updates.items() if v is not None})
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _synthetic_schema(n_attributes: int) -> AttributeSchema:
    return AttributeSchema(
        [AttributeDef(f"attr{j:02d}", "synthetic") for j in range(n_attributes)],
        ["synthetic"],
    )


def cmd_synth(args) -> int:
    cfg = _synth_config_from_args(args)
    out = _resolve_out(args)
    features, labels = data.synth_generate(cfg)
    schema = _synthetic_schema(len(cfg.positive_rates))
    data.save_manifest(labels, schema, out / "manifest.csv")
    data.save_features(features, out / "features.csv")
    save_schema(schema, out / "schema.json")
    _write_json(out / "synth_config.json", vars(cfg) | {"positive_rates": list(cfg.positive_rates)})
    print(
        f"wrote {labels.n_instances} rows over {len(set(labels.domains))} domains to {out}"
    )
    return 0


def _full_data_mask(labels):
    split = data.all_split(labels.domain_set())
    return data.active_attributes(split, labels)


def cmd_train(args) -> int:
    schema, labels, features = _load_dataset(args)
    config = _train_config_from_args(args)
    out = _resolve_out(args)
    mask = _full_data_mask(labels)
    train_lm = data.select(labels, None, "train")
    val_lm = data.select(labels, None, "val")
    model, ema, history = trainer.train(
        features, train_lm, features, val_lm, schema, mask, config, args.threshold
    )
    nncore.save_checkpoint(
        out / "checkpoint.ckpt",
        model,
        {"seed": config.seed, "step": len(history.records), "config": config.to_json_dict()},
    )
    resolved = _resolved_config(args, config)
    _write_json(out / "history.json", {"config": resolved, "history": history.to_json_dict()})

    test_lm = data.select(labels, None, "test")
    if test_lm.n_instances:
        report = trainer.evaluate(
            model, features, test_lm, mask, args.threshold, with_retrieval=True, schema=schema
        )
        _write_json(
            out / "test_report.json", {"config": resolved, "report": report.to_json_dict()}
        )
        x = data.features_for(features, test_lm)
        conf = metrics.ConfidenceMatrix(
            list(test_lm.instance_ids), trainer.predict_confidences(model, x)
        )
        metrics.save_confidences(conf, schema, out / "confidences_test.csv")
        print(f"test mA {report.mA:.4f}  F1 {report.instance_f1:.4f}  mAP {report.map:.4f}")
    print(f"artifacts written to {out}")
    return 0


def _resolved_config(args, config: trainer.TrainConfig) -> dict:
    resolved = {
        "command": args.command,
        "threshold": getattr(args, "threshold", None),
        "train": config.to_json_dict(),
    }
    for key in ("schema", "manifest", "features", "confidences", "protocol", "splits"):
        if getattr(args, key, None):
            resolved[key] = str(getattr(args, key))
    return resolved


def cmd_protocol(args) -> int:
    schema, labels, features = _load_dataset(args)
    config = _train_config_from_args(args)
    out = _resolve_out(args)
    splits = data.load_splits(args.splits) if args.splits else None
    confidences: dict = {}
    models: dict = {}
    report = trainer.run_protocol(
        args.protocol,
        features,
        labels,
        schema,
        config,
        splits=splits,
        threshold=args.threshold,
        with_retrieval=not args.no_retrieval,
        collect_confidences=confidences,
        collect_models=models,
    )
    report.config = _resolved_config(args, config)
    (out / "protocol_report.md").write_text(report.to_markdown(), encoding="utf-8")
    (out / "protocol_report.json").write_text(report.to_json(), encoding="utf-8")
    for split_id, (model, chosen_bs) in sorted(models.items()):
        nncore.save_checkpoint(
            out / f"split{split_id}.ckpt",
            model,
            {
                "seed": config.seed + split_id,
                "split": split_id,
                "batch_size": chosen_bs,
                "config": config.to_json_dict(),
            },
        )
    for (split_id, domain), conf in sorted(confidences.items()):
        metrics.save_confidences(conf, schema, out / f"confidences_split{split_id}_{domain}.csv")
    print(report.to_markdown(), end="")
    print(f"artifacts written to {out}")
    return 0


def cmd_ablate(args) -> int:
    schema, labels, features = _load_dataset(args)
    config = _train_config_from_args(args)
    out = _resolve_out(args)
    report = trainer.ablate(
        config,
        None,
        args.protocol,
        features,
        labels,
        schema,
        threshold=args.threshold,
        with_retrieval=not args.no_retrieval,
    )
    payload = report.to_json_dict()
    payload["config"] = _resolved_config(args, config)
    _write_json(out / "ablation_report.json", payload)
    (out / "ablation_report.md").write_text(report.to_markdown(), encoding="utf-8")
    print(report.to_markdown(), end="")
    print(f"artifacts written to {out}")
    return 0


def cmd_eval(args) -> int:
    schema = _load_schema_arg(args)
    labels, conf = _load_aligned_confidences(args, schema)
    mask = np.ones(len(schema), dtype=bool)
    pred = metrics.binarize(conf, args.threshold)
    report = metrics.report_from_predictions(pred, labels, mask, schema.names)
    print(
        f"mA {report.mA:.4f}  P {report.instance_precision:.4f}  "
        f"R {report.instance_recall:.4f}  F1 {report.instance_f1:.4f}  "
        f"threshold {args.threshold}"
    )
    if report.excluded_attributes:
        print(f"excluded: {', '.join(report.excluded_attributes)}")
    if args.out:
        out = _resolve_out(args)
        _write_json(
            out / "eval_report.json",
            {"config": _resolved_config(args, trainer.TrainConfig()), "report": report.to_json_dict()},
        )
        report.write_csv(out / "eval_report.csv")
        print(f"artifacts written to {out}")
    return 0


def cmd_retrieve(args) -> int:
    schema = _load_schema_arg(args)
    labels, conf = _load_aligned_confidences(args, schema)
    mask = np.ones(len(schema), dtype=bool)
    rep = retrieval.evaluate_retrieval(labels, conf, mask)
    print(f"mAP {rep.map:.4f}  R-1 {rep.rank1:.4f}  queries {rep.num_queries}")
    if args.out:
        out = _resolve_out(args)
        payload = rep.to_json_dict()
        payload["config"] = _resolved_config(args, trainer.TrainConfig())
        _write_json(out / "retrieval_report.json", payload)
        print(f"artifacts written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="upar-bench",
        description="Attribute recognition and retrieval benchmark toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_schema = sub.add_parser("schema", help="inspect or validate against a schema")
    p_schema.add_argument("action", choices=("show", "validate"))
    p_schema.add_argument("manifest", nargs="?", help="manifest to validate")
    p_schema.add_argument("--schema", default=None)
    p_schema.set_defaults(func=cmd_schema)

    p_synth = sub.add_parser("synth", help="generate a synthetic multi-domain dataset")
    p_synth.add_argument("--out", default=None)
    p_synth.add_argument("--preset", choices=("easy", "hard", "overfit"), default=None)
    p_synth.add_argument("--domains", type=int, default=None)
    p_synth.add_argument("--train-per-domain", type=int, default=None)
    p_synth.add_argument("--val-per-domain", type=int, default=None)
    p_synth.add_argument("--test-per-domain", type=int, default=None)
    p_synth.add_argument("--feature-dim", type=int, default=None)
    p_synth.add_argument("--domain-shift", type=float, default=None)
    p_synth.add_argument("--teacher-noise", type=float, default=None)
    p_synth.add_argument("--rates", default=None, help="comma-separated positive rates")
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.set_defaults(func=cmd_synth)

    def add_data_flags(p, confidences=False):
        p.add_argument("--manifest", required=True)
        if confidences:
            p.add_argument("--confidences", required=True)
        else:
            p.add_argument("--features", required=True)
        p.add_argument("--schema", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--threshold", type=float, default=0.5)

    p_train = sub.add_parser("train", help="train one model on the manifest's train rows")
    add_data_flags(p_train)
    _add_train_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_proto = sub.add_parser("protocol", help="run a CV/LOO/ALL protocol end to end")
    add_data_flags(p_proto)
    p_proto.add_argument("--protocol", choices=("cv", "loo", "all"), required=True)
    p_proto.add_argument("--splits", default=None, help="JSON split file overriding presets")
    p_proto.add_argument("--no-retrieval", action="store_true")
    _add_train_flags(p_proto)
    p_proto.set_defaults(func=cmd_protocol)

    p_ablate = sub.add_parser("ablate", help="run the regularization ladder")
    add_data_flags(p_ablate)
    p_ablate.add_argument("--protocol", choices=("cv", "loo", "all"), required=True)
    p_ablate.add_argument("--no-retrieval", action="store_true")
    _add_train_flags(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_eval = sub.add_parser("eval", help="recognition metrics for a confidence file")
    add_data_flags(p_eval, confidences=True)
    p_eval.set_defaults(func=cmd_eval)

    p_retr = sub.add_parser("retrieve", help="retrieval metrics for a confidence file")
    add_data_flags(p_retr, confidences=True)
    p_retr.set_defaults(func=cmd_retrieve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "schema" and args.action == "validate" and not args.manifest:
        parser.error("schema validate requires a manifest path")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
