"""Annotation matrices, protocol splits, attribute statistics and synthetic data.

File formats
------------
Manifest CSV      header ``instance_id,domain,partition,<attribute names>``,
                  one row per instance, attribute cells 0/1, partition one of
                  train/val/test.  Attribute columns may appear in any order;
                  they are re-aligned to the schema.
Feature CSV       header ``instance_id,f0..f{D-1}``, real-valued cells.
Split JSON        list of ``{"id": int, "protocol": "CV|LOO|ALL",
                  "train": [...], "eval": [...]}`` objects.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .schema import AttributeSchema

PARTITIONS = ("train", "val", "test")

# Canonical sub-dataset names used by the shipped split presets.
CANONICAL_DOMAINS = ("MARKET", "PA100K", "PETA", "RAPV2")


class ManifestError(ValueError):
    """Malformed annotation manifest."""


class NonBinaryLabel(ManifestError):
    pass


class UnknownColumn(ManifestError):
    pass


class UnknownPartition(ManifestError):
    pass


class DuplicateInstanceId(ManifestError):
    pass


class AlignmentError(ValueError):
    """Two row-aligned structures disagree on instance ids or order."""


class EmptySelection(ValueError):
    """An operation that needs at least one row got none."""


@dataclass(eq=False)
class LabelMatrix:
    """Per-instance ground-truth bits with domain and partition tags."""

    instance_ids: list[str]
    domains: list[str]
    partitions: list[str]
    labels: np.ndarray  # N x A, values in {0, 1}

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.labels.ndim != 2:
            raise ValueError("labels must be a 2-d array")
        n = self.labels.shape[0]
        if not (len(self.instance_ids) == len(self.domains) == len(self.partitions) == n):
            raise ValueError("instance_ids/domains/partitions must match label row count")
        if len(set(self.instance_ids)) != n:
            raise DuplicateInstanceId("instance ids must be unique")
        bad = (self.labels != 0) & (self.labels != 1)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise NonBinaryLabel(f"label at row {i}, column {j} is not 0/1")
        for p in set(self.partitions):
            if p not in PARTITIONS:
                raise UnknownPartition(f"unknown partition tag {p!r}")

    def __eq__(self, other):
        if not isinstance(other, LabelMatrix):
            return NotImplemented
        return (
            self.instance_ids == other.instance_ids
            and self.domains == other.domains
            and self.partitions == other.partitions
            and np.array_equal(self.labels, other.labels)
        )

    @property
    def n_instances(self) -> int:
        return self.labels.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.labels.shape[1]

    def domain_set(self) -> set[str]:
        return set(self.domains)


@dataclass(eq=False)
class FeatureMatrix:
    """Real-valued instance features, row-aligned with a LabelMatrix by id."""

    instance_ids: list[str]
    features: np.ndarray  # N x D

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if len(self.instance_ids) != self.features.shape[0]:
            raise ValueError("instance_ids must match feature row count")
        if len(set(self.instance_ids)) != len(self.instance_ids):
            raise DuplicateInstanceId("instance ids must be unique")

    def __eq__(self, other):
        if not isinstance(other, FeatureMatrix):
            return NotImplemented
        return self.instance_ids == other.instance_ids and np.array_equal(
            self.features, other.features
        )


def features_for(features: FeatureMatrix, labels: LabelMatrix) -> np.ndarray:
    """Feature rows reordered to match `labels` exactly; raises on missing ids."""
    pos = {iid: i for i, iid in enumerate(features.instance_ids)}
    try:
        rows = [pos[iid] for iid in labels.instance_ids]
    except KeyError as exc:
        raise AlignmentError(f"no features for instance id {exc.args[0]!r}") from exc
    return features.features[np.asarray(rows, dtype=np.intp)]


@dataclass(frozen=True)
class SplitSpec:
    """One protocol split: which domains train and which evaluate."""

    id: int
    protocol: str  # CV, LOO or ALL
    train_domains: frozenset[str]
    eval_domains: frozenset[str]

    def __post_init__(self):
        if self.protocol not in ("CV", "LOO", "ALL"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if not self.eval_domains:
            raise ValueError("eval_domains must be non-empty")
        if self.protocol in ("CV", "LOO") and self.train_domains & self.eval_domains:
            raise ValueError(f"{self.protocol} split {self.id}: train and eval domains overlap")


@dataclass
class AttributeStats:
    """Per-attribute positive counts and ratios over a row selection."""

    positive_count: np.ndarray  # int, per attribute
    positive_ratio: np.ndarray  # float in [0, 1], per attribute


@dataclass
class SynthConfig:
    """Configuration for the seeded multi-domain synthetic generator."""

    domains: int = 4
    train_per_domain: int = 500
    val_per_domain: int = 125
    test_per_domain: int = 125
    feature_dim: int = 16
    domain_shift: float = 0.0
    positive_rates: tuple[float, ...] = (0.5, 0.35, 0.25, 0.15, 0.4, 0.3, 0.2, 0.1)
    teacher_noise: float = 0.25
    label_noise: float = 0.0  # per-cell annotation flip probability
    seed: int = 0

    def __post_init__(self):
        if self.domains < 1:
            raise ValueError("domains must be positive")
        for name in ("train_per_domain", "val_per_domain", "test_per_domain", "feature_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.domain_shift < 0:
            raise ValueError("domain_shift must be >= 0")
        if not 0.0 <= self.label_noise < 0.5:
            raise ValueError("label_noise must lie in [0, 0.5)")
        if not self.positive_rates:
            raise ValueError("positive_rates must be non-empty")
        for r in self.positive_rates:
            if not 0.0 < r < 1.0:
                raise ValueError(f"positive rate {r} outside (0, 1)")


def load_manifest(path, schema: AttributeSchema) -> LabelMatrix:
    """Read a manifest CSV and validate it against the schema."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        if header[:3] != ["instance_id", "domain", "partition"]:
            raise ManifestError(
                f"{path}: header must start with instance_id,domain,partition"
            )
        cols = header[3:]
        want = set(schema.names)
        for c in cols:
            if c not in want:
                raise UnknownColumn(f"{path}: unknown attribute column {c!r}")
        missing = want - set(cols)
        if missing:
            raise ManifestError(f"{path}: missing attribute columns {sorted(missing)}")

        ids, domains, parts, rows = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ManifestError(f"{path}: line {lineno}: expected {len(header)} cells")
            ids.append(row[0])
            domains.append(row[1])
            if row[2] not in PARTITIONS:
                raise UnknownPartition(f"{path}: line {lineno}: unknown partition {row[2]!r}")
            parts.append(row[2])
            bits = []
            for colno, cell in enumerate(row[3:]):
                if cell not in ("0", "1"):
                    raise NonBinaryLabel(
                        f"{path}: line {lineno}, column {cols[colno]!r}: "
                        f"cell {cell!r} is not 0/1"
                    )
                bits.append(int(cell))
            rows.append(bits)

    if len(set(ids)) != len(ids):
        seen, dup = set(), None
        for iid in ids:
            if iid in seen:
                dup = iid
                break
            seen.add(iid)
        raise DuplicateInstanceId(f"{path}: duplicate instance id {dup!r}")

    labels = np.asarray(rows, dtype=np.int8).reshape(len(ids), len(cols))
    # Re-align columns to schema order if the header permuted them.
    order = [cols.index(name) for name in schema.names]
    labels = labels[:, order]
    return LabelMatrix(ids, domains, parts, labels)


def save_manifest(matrix: LabelMatrix, schema: AttributeSchema, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["instance_id", "domain", "partition"] + schema.names)
        for i, iid in enumerate(matrix.instance_ids):
            writer.writerow(
                [iid, matrix.domains[i], matrix.partitions[i]]
                + [str(int(v)) for v in matrix.labels[i]]
            )


def load_features(path) -> FeatureMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty feature file") from None
        if header[0] != "instance_id":
            raise ManifestError(f"{path}: feature header must start with instance_id")
        dim = len(header) - 1
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 1:
                raise ManifestError(f"{path}: line {lineno}: expected {dim + 1} cells")
            ids.append(row[0])
            try:
                rows.append([float(c) for c in row[1:]])
            except ValueError as exc:
                raise ManifestError(f"{path}: line {lineno}: {exc}") from exc
    return FeatureMatrix(ids, np.asarray(rows, dtype=np.float64).reshape(len(ids), dim))


def save_features(features: FeatureMatrix, path):
    dim = features.features.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["instance_id"] + [f"f{i}" for i in range(dim)])
        for iid, row in zip(features.instance_ids, features.features):
            writer.writerow([iid] + [repr(float(v)) for v in row])


def upar_split_presets(protocol: str) -> list[SplitSpec]:
    """The four shipped splits for the CV or LOO generalization protocol.

    LOO split i holds out CANONICAL_DOMAINS[i] for evaluation; CV split i
    trains on CANONICAL_DOMAINS[i] alone and evaluates on the rest.
    """
    if protocol not in ("CV", "LOO"):
        raise ValueError(f"no presets for protocol {protocol!r}")
    splits = []
    for i, dom in enumerate(CANONICAL_DOMAINS):
        rest = frozenset(d for d in CANONICAL_DOMAINS if d != dom)
        if protocol == "LOO":
            splits.append(SplitSpec(i, "LOO", rest, frozenset({dom})))
        else:
            splits.append(SplitSpec(i, "CV", frozenset({dom}), rest))
    return splits


def all_split(domains) -> SplitSpec:
    """The ALL protocol: every domain both trains and evaluates."""
    doms = frozenset(domains)
    if not doms:
        raise ValueError("ALL split needs at least one domain")
    return SplitSpec(0, "ALL", doms, doms)


def rotated_splits(protocol: str, domains) -> list[SplitSpec]:
    """CV/LOO rotation over an arbitrary domain set (sorted order)."""
    doms = sorted(set(domains))
    if len(doms) < 2:
        raise ValueError("rotation needs at least two domains")
    splits = []
    for i, dom in enumerate(doms):
        rest = frozenset(d for d in doms if d != dom)
        if protocol == "LOO":
            splits.append(SplitSpec(i, "LOO", rest, frozenset({dom})))
        elif protocol == "CV":
            splits.append(SplitSpec(i, "CV", frozenset({dom}), rest))
        else:
            raise ValueError(f"no rotation for protocol {protocol!r}")
    return splits


def load_splits(path) -> list[SplitSpec]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return [
        SplitSpec(int(s["id"]), s["protocol"], frozenset(s["train"]), frozenset(s["eval"]))
        for s in raw
    ]


def select(matrix: LabelMatrix, domains=None, partition=None) -> LabelMatrix:
    """Rows filtered by domain membership and partition tag, order preserved.

    `domains=None` keeps all domains; `partition=None` keeps all partitions.
    An empty result is valid.
    """
    doms = None if domains is None else set(domains)
    keep = [
        i
        for i in range(matrix.n_instances)
        if (doms is None or matrix.domains[i] in doms)
        and (partition is None or matrix.partitions[i] == partition)
    ]
    return LabelMatrix(
        [matrix.instance_ids[i] for i in keep],
        [matrix.domains[i] for i in keep],
        [matrix.partitions[i] for i in keep],
        matrix.labels[np.asarray(keep, dtype=np.intp)] if keep else
        np.zeros((0, matrix.n_attributes), dtype=np.int8),
    )


def attribute_stats(matrix: LabelMatrix) -> AttributeStats:
    if matrix.n_instances == 0:
        raise EmptySelection("attribute_stats needs at least one row")
    counts = matrix.labels.sum(axis=0).astype(np.int64)
    return AttributeStats(counts, counts / matrix.n_instances)


def active_attributes(split: SplitSpec, matrix: LabelMatrix) -> np.ndarray:
    """Boolean mask: attribute has >= 1 positive in the split's training rows.

    The mask governs every downstream metric and retrieval query column.
    """
    train = select(matrix, split.train_domains, "train")
    if train.n_instances == 0:
        raise EmptySelection(
            f"split {split.id}: no training rows for domains {sorted(split.train_domains)}"
        )
    return train.labels.sum(axis=0) >= 1


def _pooled_quantile_threshold(mus, sigmas, rate, tol=1e-12):
    """Threshold t with (1/K) sum_d P(N(mu_d, sigma_d^2) >= t) == rate.

    Solved by bisection on the pooled Gaussian-mixture CDF; deterministic.
    """
    dist = NormalDist()
    lo = min(m - 8.0 * s for m, s in zip(mus, sigmas))
    hi = max(m + 8.0 * s for m, s in zip(mus, sigmas))

    def pooled_tail(t):
        return sum(1.0 - dist.cdf((t - m) / s) for m, s in zip(mus, sigmas)) / len(mus)

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if pooled_tail(mid) > rate:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def synth_generate(config: SynthConfig) -> tuple[FeatureMatrix, LabelMatrix]:
    """Seeded multi-domain synthetic dataset.

    Per domain, features are unit-variance Gaussian around a domain offset of
    norm `domain_shift`.  Labels come from a shared linear teacher perturbed
    per domain (`teacher_noise`).  Each attribute uses one global threshold,
    placed at the analytic quantile of the pooled cross-domain score
    distribution, so realized positive rates concentrate around
    `positive_rates` while per-domain rates may shift with the domains.
    `label_noise` then flips each cell independently, an analogue of
    annotation noise (it biases realized rates toward 0.5 accordingly).
    Bit-identical for identical configs.
    """
    rng = np.random.default_rng(config.seed)
    n_attr = len(config.positive_rates)
    dim = config.feature_dim

    teacher = rng.standard_normal((dim, n_attr))
    if config.domains == 4:
        names = list(CANONICAL_DOMAINS)
    else:
        names = [f"D{i}" for i in range(config.domains)]

    offsets = []
    for _ in names:
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
        offsets.append(config.domain_shift * direction)

    teachers = [
        teacher + config.teacher_noise * rng.standard_normal((dim, n_attr)) for _ in names
    ]
    # Per-domain score moments: x ~ N(u_d, I) makes x @ w ~ N(u_d @ w, |w|^2).
    mus = np.stack([offsets[d] @ teachers[d] for d in range(len(names))])
    sigmas = np.stack([np.linalg.norm(teachers[d], axis=0) for d in range(len(names))])
    thresholds = np.array(
        [
            _pooled_quantile_threshold(mus[:, j], sigmas[:, j], config.positive_rates[j])
            for j in range(n_attr)
        ]
    )

    counts = (
        ("train", config.train_per_domain),
        ("val", config.val_per_domain),
        ("test", config.test_per_domain),
    )
    ids, doms, parts, feat_rows, label_rows = [], [], [], [], []
    for d, name in enumerate(names):
        for part, n in counts:
            x = offsets[d] + rng.standard_normal((n, dim))
            scores = x @ teachers[d]
            y = (scores >= thresholds).astype(np.int8)
            if config.label_noise > 0.0:
                flips = rng.random((n, n_attr)) < config.label_noise
                y = np.where(flips, 1 - y, y).astype(np.int8)
            for i in range(n):
                ids.append(f"{name}_{part}_{i:05d}")
                doms.append(name)
                parts.append(part)
            feat_rows.append(x)
            label_rows.append(y)

    features = FeatureMatrix(list(ids), np.concatenate(feat_rows, axis=0))
    labels = LabelMatrix(ids, doms, parts, np.concatenate(label_rows, axis=0))
    return features, labels
