"""Attribute-based retrieval: query construction, ranking, mAP and Rank-1.

Queries are the unique masked ground-truth attribute vectors of the test
selection (first-occurrence order).  The gallery is ranked by ascending
Euclidean distance between the binary query vector and each masked confidence
row; ties break by ascending gallery index, which makes every ranking and
metric bit-deterministic.  A gallery item is a positive match iff its masked
ground-truth vector equals the query exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import AlignmentError, EmptySelection, LabelMatrix
from .metrics import ConfidenceMatrix


@dataclass
class Query:
    bits: np.ndarray  # binary vector over masked attribute columns
    positive_count: int

    def bits_string(self) -> str:
        return "".join(str(int(b)) for b in self.bits)


@dataclass
class Ranking:
    order: np.ndarray  # gallery indices, best match first
    distances: np.ndarray  # aligned, non-decreasing


@dataclass
class QueryResult:
    bits: str
    positives: int
    ap: float
    top1_hit: bool


@dataclass
class RetrievalReport:
    num_queries: int
    map: float
    rank1: float
    per_query: list[QueryResult]

    def to_json_dict(self) -> dict:
        return {
            "num_queries": self.num_queries,
            "map": self.map,
            "rank1": self.rank1,
            "per_query": [
                {"bits": q.bits, "positives": q.positives, "ap": q.ap, "top1_hit": q.top1_hit}
                for q in self.per_query
            ],
        }


def _masked(labels: LabelMatrix, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (labels.n_attributes,):
        raise AlignmentError("mask length must equal attribute count")
    return labels.labels[:, mask].astype(np.int8)


def build_queries(test: LabelMatrix, mask) -> list[Query]:
    """One query per distinct masked ground-truth row, with its multiplicity."""
    if test.n_instances == 0:
        raise EmptySelection("query construction needs a non-empty test selection")
    rows = _masked(test, mask)
    order: dict[bytes, int] = {}
    for i in range(rows.shape[0]):
        key = rows[i].tobytes()
        order[key] = order.get(key, 0) + 1
    return [
        Query(np.frombuffer(key, dtype=np.int8).copy(), count)
        for key, count in order.items()
    ]


def rank_gallery(query: Query, conf: ConfidenceMatrix, mask) -> Ranking:
    """Gallery sorted by ascending distance to the query bit vector."""
    mask = np.asarray(mask, dtype=bool)
    scores = conf.scores[:, mask]
    n = scores.shape[0]
    if n == 0:
        raise EmptySelection("cannot rank an empty gallery")
    if scores.shape[1] != query.bits.shape[0]:
        raise AlignmentError("query width must match masked confidence width")
    diff = scores - query.bits.astype(np.float64)
    dist = np.sqrt((diff * diff).sum(axis=1))
    order = np.lexsort((np.arange(n), dist))
    return Ranking(order, dist[order])


def average_precision(ranking: Ranking, gt: LabelMatrix, query: Query, mask) -> float:
    """AP over positive ranks; positives match the query bits exactly."""
    rows = _masked(gt, mask)
    is_pos = (rows == query.bits).all(axis=1)
    positives = int(is_pos.sum())
    if positives == 0:
        raise ValueError("query has no positive gallery item")
    hits = is_pos[ranking.order]
    cum = np.cumsum(hits)
    ranks = np.nonzero(hits)[0] + 1  # 1-based rank positions of positives
    return float((cum[ranks - 1] / ranks).sum() / positives)


def evaluate_retrieval(test: LabelMatrix, conf: ConfidenceMatrix, mask) -> RetrievalReport:
    """mAP and Rank-1 over all queries built from the test annotations."""
    if test.instance_ids != conf.instance_ids:
        raise AlignmentError("confidences must be row-aligned with the test selection")
    rows = _masked(test, mask)
    queries = build_queries(test, mask)
    results = []
    ap_total = 0.0
    hits = 0
    for query in queries:
        ranking = rank_gallery(query, conf, mask)
        ap = average_precision(ranking, test, query, mask)
        top1 = bool((rows[ranking.order[0]] == query.bits).all())
        results.append(QueryResult(query.bits_string(), query.positive_count, ap, top1))
        ap_total += ap
        hits += top1
    return RetrievalReport(
        num_queries=len(queries),
        map=ap_total / len(queries),
        rank1=hits / len(queries),
        per_query=results,
    )
