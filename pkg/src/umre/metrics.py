"""IR metrics over graded relevance judgments, plus score aggregation.

Conventions (BEIR-style): NDCG gain is the raw grade (not 2^grade - 1) with a
1/log2(position + 1) discount over 1-based positions; unjudged retrieved
candidates count as grade 0; the benchmark micro-average is the unweighted
mean over datasets.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum

from .errors import EmptyInput, InvalidConfig, NoJudgedQueries, NoPositives
from .matrix import RecordId
from .search import TopKResult

Qrels = Mapping[str, Mapping[str, int]]


class MetricKind(str, Enum):
    NDCG = "ndcg"
    RECALL = "recall"


@dataclass(frozen=True)
class MetricSpec:
    kind: MetricKind
    cutoff: int

    def __post_init__(self):
        if self.cutoff < 1:
            raise InvalidConfig(f"metric cutoff must be >= 1, got {self.cutoff}")

    def __str__(self) -> str:
        return f"{self.kind.value}@{self.cutoff}"

    @classmethod
    def parse(cls, text: str) -> "MetricSpec":
        """Parse strings like ``ndcg@10`` or ``recall@5``."""
        kind, sep, cutoff = text.strip().lower().partition("@")
        if not sep or kind not in (m.value for m in MetricKind):
            raise InvalidConfig(f"cannot parse metric spec {text!r}")
        try:
            n = int(cutoff)
        except ValueError:
            raise InvalidConfig(f"cannot parse metric cutoff in {text!r}") from None
        return cls(MetricKind(kind), n)


def _as_id_str(record_id: RecordId) -> str:
    # Implicit integer ids join against qrels by their decimal string form.
    return record_id if isinstance(record_id, str) else str(record_id)


def ndcg_at_k(ranking: Sequence[RecordId], judged: Mapping[str, int], k: int) -> float:
    """DCG@k / IDCG@k; 0 when the query has no positive grades."""
    if k < 1:
        raise InvalidConfig(f"k must be >= 1, got {k}")
    grades = sorted((g for g in judged.values() if g > 0), reverse=True)
    if not grades:
        return 0.0
    dcg = 0.0
    for pos, cid in enumerate(ranking[:k], start=1):
        grade = judged.get(_as_id_str(cid), 0)
        if grade > 0:
            dcg += grade / math.log2(pos + 1)
    idcg = sum(g / math.log2(pos + 1) for pos, g in enumerate(grades[:k], start=1))
    return dcg / idcg


def recall_at_k(ranking: Sequence[RecordId], judged: Mapping[str, int], k: int) -> float:
    """Fraction of the query's positives appearing in the top k."""
    if k < 1:
        raise InvalidConfig(f"k must be >= 1, got {k}")
    positives = {cid for cid, g in judged.items() if g > 0}
    if not positives:
        raise NoPositives("recall is undefined for a query with no positive grades")
    hit = sum(1 for cid in ranking[:k] if _as_id_str(cid) in positives)
    return hit / len(positives)


def metric_at_k(ranking: Sequence[RecordId], judged: Mapping[str, int], spec: MetricSpec) -> float:
    if spec.kind is MetricKind.NDCG:
        return ndcg_at_k(ranking, judged, spec.cutoff)
    return recall_at_k(ranking, judged, spec.cutoff)


@dataclass
class DatasetEval:
    score: float
    per_query: dict[str, float]
    skipped_queries: int


def evaluate_dataset_detailed(
    results: Sequence[TopKResult], qrels: Qrels, spec: MetricSpec
) -> DatasetEval:
    """Mean per-query metric over judged queries; unjudged queries are skipped."""
    per_query: dict[str, float] = {}
    skipped = 0
    for res in results:
        qid = _as_id_str(res.query_id)
        judged = qrels.get(qid)
        if judged is None:
            skipped += 1
            continue
        ranking = [cid for cid, _ in res.hits]
        per_query[qid] = metric_at_k(ranking, judged, spec)
    if not per_query:
        raise NoJudgedQueries("no result query appears in the judgments")
    score = sum(per_query.values()) / len(per_query)
    return DatasetEval(score=score, per_query=per_query, skipped_queries=skipped)


def evaluate_dataset(results: Sequence[TopKResult], qrels: Qrels, spec: MetricSpec) -> float:
    return evaluate_dataset_detailed(results, qrels, spec).score


@dataclass
class AggregateReport:
    per_dataset: dict[str, float]
    per_category: dict[str, float]
    micro_average: float
    dataset_category: dict[str, str] = field(default_factory=dict)


def aggregate(scores_by_dataset: Mapping[str, tuple[str, float]]) -> AggregateReport:
    """Aggregate ``{dataset: (category, score)}`` into per-category means and a micro-average.

    The micro-average is the unweighted mean over datasets regardless of
    category sizes.
    """
    if not scores_by_dataset:
        raise EmptyInput("aggregate needs at least one dataset score")
    per_dataset: dict[str, float] = {}
    dataset_category: dict[str, str] = {}
    by_category: dict[str, list[float]] = {}
    for name in sorted(scores_by_dataset):
        category, score = scores_by_dataset[name]
        if not (0.0 <= score <= 1.0):
            raise InvalidConfig(f"dataset {name!r} score {score} outside [0, 1]")
        per_dataset[name] = score
        dataset_category[name] = category
        by_category.setdefault(category, []).append(score)
    per_category = {cat: sum(v) / len(v) for cat, v in sorted(by_category.items())}
    micro = sum(per_dataset.values()) / len(per_dataset)
    return AggregateReport(
        per_dataset=per_dataset,
        per_category=per_category,
        micro_average=micro,
        dataset_category=dataset_category,
    )
