"""Recognition metrics and their two-level protocol aggregation.

Label-based side: per-attribute mean of true-positive and true-negative rate,
averaged over the non-excluded attributes (mA).  Instance-based side:
precision/recall of each instance's predicted attribute set against its
ground-truth set, averaged over instances, combined into F1 as the harmonic
mean of the two averages.  A per-instance F1 average is reported alongside
for comparison.

Aggregation: eval datasets of a split are averaged unweighted; protocol-level
numbers are mean and population standard deviation across splits.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import AlignmentError, EmptySelection, LabelMatrix
from .schema import AttributeSchema

# Scalar metric fields subject to aggregation (report attribute, JSON key).
SCALAR_FIELDS = (
    ("mA", "mA"),
    ("instance_precision", "instance_precision"),
    ("instance_recall", "instance_recall"),
    ("instance_f1", "instance_f1"),
    ("instance_f1_samples", "instance_f1_samples"),
    ("map", "map"),
    ("rank1", "rank1"),
)

# Markdown column layout shared by protocol and ablation tables.
_MARKDOWN_COLUMNS = (("mA", "mA"), ("instance_f1", "F1"), ("map", "mAP"), ("rank1", "R-1"))


class MetricsError(ValueError):
    pass


@dataclass(eq=False)
class ConfidenceMatrix:
    """Predicted per-attribute confidence scores in [0, 1], row-aligned to ids."""

    instance_ids: list[str]
    scores: np.ndarray  # N x A

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ValueError("scores must be a 2-d array")
        if len(self.instance_ids) != self.scores.shape[0]:
            raise ValueError("instance_ids must match score row count")
        if self.scores.size and (self.scores.min() < 0.0 or self.scores.max() > 1.0):
            raise ValueError("confidence scores must lie in [0, 1]")


@dataclass(eq=False)
class PredictionMatrix:
    """Hard binary predictions."""

    values: np.ndarray  # N x A in {0, 1}

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int8)
        if self.values.ndim != 2:
            raise ValueError("predictions must be a 2-d array")
        if self.values.size and not np.isin(self.values, (0, 1)).all():
            raise ValueError("predictions must be binary")


@dataclass
class AttributeDetail:
    name: str
    tpr: float | None = None
    tnr: float | None = None
    mean_acc: float | None = None
    excluded_reason: str | None = None


@dataclass
class MetricReport:
    mA: float
    instance_precision: float
    instance_recall: float
    instance_f1: float
    instance_f1_samples: float | None = None
    per_attribute: list[AttributeDetail] = field(default_factory=list)
    map: float | None = None
    rank1: float | None = None
    excluded_attributes: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "mA": self.mA,
            "instance_precision": self.instance_precision,
            "instance_recall": self.instance_recall,
            "instance_f1": self.instance_f1,
            "instance_f1_samples": self.instance_f1_samples,
            "map": self.map,
            "rank1": self.rank1,
            "excluded_attributes": list(self.excluded_attributes),
            "per_attribute": [
                {
                    "name": d.name,
                    "tpr": d.tpr,
                    "tnr": d.tnr,
                    "mean_acc": d.mean_acc,
                    "excluded_reason": d.excluded_reason,
                }
                for d in self.per_attribute
            ],
        }

    def to_csv_rows(self) -> list[list[str]]:
        """Long-format rows: kind,name,field,value."""
        rows = [["kind", "name", "field", "value"]]
        for attr_name, key in SCALAR_FIELDS:
            value = getattr(self, attr_name)
            if value is not None:
                rows.append(["scalar", key, "", repr(float(value))])
        for d in self.per_attribute:
            for fld in ("tpr", "tnr", "mean_acc"):
                v = getattr(d, fld)
                if v is not None:
                    rows.append(["attribute", d.name, fld, repr(float(v))])
            if d.excluded_reason is not None:
                rows.append(["attribute", d.name, "excluded_reason", d.excluded_reason])
        return rows

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self.to_csv_rows())


def binarize(conf: ConfidenceMatrix, threshold: float = 0.5) -> PredictionMatrix:
    """Entry is 1 iff score >= threshold (ties count as positive)."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return PredictionMatrix((conf.scores >= threshold).astype(np.int8))


def _check_shapes(pred: PredictionMatrix, gt: LabelMatrix, mask: np.ndarray):
    mask = np.asarray(mask, dtype=bool)
    if pred.values.shape != gt.labels.shape:
        raise AlignmentError(
            f"prediction shape {pred.values.shape} != label shape {gt.labels.shape}"
        )
    if mask.shape != (gt.n_attributes,):
        raise AlignmentError("mask length must equal attribute count")
    return mask


def mean_accuracy(
    pred: PredictionMatrix, gt: LabelMatrix, mask: np.ndarray, names: list[str] | None = None
) -> tuple[float, list[AttributeDetail]]:
    """Label-based mean accuracy with recorded exclusions.

    Per included attribute: mean of TP/P and TN/N.  An attribute is excluded
    when masked out or when the selection has no positive (or no negative)
    sample for it; excluded attributes carry a reason instead of a 0/NaN term.
    """
    mask = _check_shapes(pred, gt, mask)
    n = gt.n_instances
    if names is None:
        names = [f"a{j}" for j in range(gt.n_attributes)]
    details = []
    included = []
    for j in range(gt.n_attributes):
        if not mask[j]:
            details.append(AttributeDetail(names[j], excluded_reason="inactive_in_training"))
            continue
        pos = int(gt.labels[:, j].sum())
        neg = n - pos
        if pos == 0:
            details.append(AttributeDetail(names[j], excluded_reason="no_positive_test_samples"))
            continue
        if neg == 0:
            details.append(AttributeDetail(names[j], excluded_reason="no_negative_test_samples"))
            continue
        tp = int(((pred.values[:, j] == 1) & (gt.labels[:, j] == 1)).sum())
        tn = int(((pred.values[:, j] == 0) & (gt.labels[:, j] == 0)).sum())
        tpr = tp / pos
        tnr = tn / neg
        acc = (tpr + tnr) / 2.0
        details.append(AttributeDetail(names[j], tpr, tnr, acc))
        included.append(acc)
    if not included:
        raise MetricsError("no attribute left to average after exclusions")
    return sum(included) / len(included), details


def _instance_pr(pred: PredictionMatrix, gt: LabelMatrix, mask: np.ndarray):
    """Per-instance precision/recall arrays over masked columns.

    Conventions: empty prediction set gives precision 0, empty ground-truth
    set gives recall 0, both empty counts as a perfectly described instance
    (precision = recall = 1).
    """
    mask = _check_shapes(pred, gt, mask)
    if gt.n_instances == 0:
        raise EmptySelection("instance metrics need at least one row")
    p = pred.values[:, mask].astype(np.int64)
    g = gt.labels[:, mask].astype(np.int64)
    inter = (p & g).sum(axis=1)
    n_pred = p.sum(axis=1)
    n_gt = g.sum(axis=1)
    both_empty = (n_pred == 0) & (n_gt == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(n_pred > 0, inter / np.maximum(n_pred, 1), 0.0)
        rec = np.where(n_gt > 0, inter / np.maximum(n_gt, 1), 0.0)
    prec = np.where(both_empty, 1.0, prec)
    rec = np.where(both_empty, 1.0, rec)
    return prec, rec


def instance_prf(
    pred: PredictionMatrix, gt: LabelMatrix, mask: np.ndarray
) -> tuple[float, float, float]:
    """Instance-averaged precision and recall plus their harmonic mean."""
    prec, rec = _instance_pr(pred, gt, mask)
    precision = float(prec.mean())
    recall = float(rec.mean())
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def instance_f1_samples(pred: PredictionMatrix, gt: LabelMatrix, mask: np.ndarray) -> float:
    """Alternative F1 form: mean of per-instance F1 values."""
    prec, rec = _instance_pr(pred, gt, mask)
    denom = prec + rec
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(denom > 0, 2 * prec * rec / np.maximum(denom, 1e-300), 0.0)
    return float(f1.mean())


def report_from_predictions(
    pred: PredictionMatrix,
    gt: LabelMatrix,
    mask: np.ndarray,
    names: list[str] | None = None,
) -> MetricReport:
    """Recognition-only MetricReport (retrieval fields left unset)."""
    ma, details = mean_accuracy(pred, gt, mask, names)
    precision, recall, f1 = instance_prf(pred, gt, mask)
    return MetricReport(
        mA=ma,
        instance_precision=precision,
        instance_recall=recall,
        instance_f1=f1,
        instance_f1_samples=instance_f1_samples(pred, gt, mask),
        per_attribute=details,
        excluded_attributes=[d.name for d in details if d.excluded_reason is not None],
    )


def aggregate_split(reports: list[MetricReport]) -> MetricReport:
    """Unweighted arithmetic mean of each scalar metric across eval datasets.

    Optional metrics are averaged only when present in every report.
    Per-attribute detail does not aggregate across datasets and is left empty.
    """
    if not reports:
        raise MetricsError("aggregate_split needs at least one report")
    values = {}
    for attr_name, _ in SCALAR_FIELDS:
        vals = [getattr(r, attr_name) for r in reports]
        values[attr_name] = None if any(v is None for v in vals) else sum(vals) / len(vals)
    return MetricReport(
        mA=values["mA"],
        instance_precision=values["instance_precision"],
        instance_recall=values["instance_recall"],
        instance_f1=values["instance_f1"],
        instance_f1_samples=values["instance_f1_samples"],
        map=values["map"],
        rank1=values["rank1"],
    )


def aggregate_protocol(
    split_reports: list[MetricReport],
) -> tuple[dict[str, float], dict[str, float]]:
    """Per-metric mean and population standard deviation across splits."""
    if not split_reports:
        raise MetricsError("aggregate_protocol needs at least one split")
    means, stds = {}, {}
    for attr_name, key in SCALAR_FIELDS:
        vals = [getattr(r, attr_name) for r in split_reports]
        if any(v is None for v in vals):
            continue
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        means[key] = mean
        stds[key] = math.sqrt(var)
    return means, stds


@dataclass
class SplitResult:
    """Evaluation of one split: per-dataset reports plus their average."""

    split_id: int
    train_domains: list[str]
    eval_domains: list[str]
    per_dataset: dict[str, MetricReport]
    average: MetricReport
    selected_source: str | None = None  # raw or ema checkpoint won validation
    train_report: MetricReport | None = None
    history: list[dict] | None = None

    def to_json_dict(self) -> dict:
        out = {
            "split_id": self.split_id,
            "train_domains": list(self.train_domains),
            "eval_domains": list(self.eval_domains),
            "selected_source": self.selected_source,
            "per_dataset": {k: v.to_json_dict() for k, v in self.per_dataset.items()},
            "average": self.average.to_json_dict(),
        }
        if self.train_report is not None:
            out["train_report"] = self.train_report.to_json_dict()
        if self.history is not None:
            out["history"] = self.history
        return out


def format_mean_std(mean: float, std: float) -> str:
    """Percentage cell in the tables' ``mean ± std`` style, one decimal."""
    return f"{100.0 * mean:.1f} ± {100.0 * std:.1f}"


@dataclass
class ProtocolReport:
    """All splits of one protocol plus cross-split mean and std."""

    protocol: str
    per_split: list[SplitResult]
    protocol_mean: dict[str, float]
    protocol_std: dict[str, float]
    config: dict | None = None

    def to_json_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "mean": self.protocol_mean,
            "std": self.protocol_std,
            "splits": [s.to_json_dict() for s in self.per_split],
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"

    def to_markdown(self) -> str:
        cols = [label for key, label in _MARKDOWN_COLUMNS if key in self.protocol_mean]
        keys = [key for key, _ in _MARKDOWN_COLUMNS if key in self.protocol_mean]
        lines = [
            "| Protocol | " + " | ".join(cols) + " |",
            "|" + "---|" * (len(cols) + 1),
            "| "
            + self.protocol
            + " | "
            + " | ".join(
                format_mean_std(self.protocol_mean[k], self.protocol_std[k]) for k in keys
            )
            + " |",
        ]
        return "\n".join(lines) + "\n"


def save_confidences(conf: ConfidenceMatrix, schema: AttributeSchema, path):
    """Confidence CSV: header ``instance_id,<attribute names>``, floats."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["instance_id"] + schema.names)
        for iid, row in zip(conf.instance_ids, conf.scores):
            writer.writerow([iid] + [repr(float(v)) for v in row])


def load_confidences(path, schema: AttributeSchema) -> ConfidenceMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MetricsError(f"{path}: empty confidence file") from None
        if header != ["instance_id"] + schema.names:
            raise MetricsError(
                f"{path}: confidence header must be instance_id followed by the "
                "schema attribute names in order"
            )
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise MetricsError(f"{path}: line {lineno}: expected {len(header)} cells")
            ids.append(row[0])
            rows.append([float(c) for c in row[1:]])
    scores = np.asarray(rows, dtype=np.float64).reshape(len(ids), len(schema.names))
    return ConfidenceMatrix(ids, scores)
