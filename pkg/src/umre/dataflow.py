"""Training-data composition mixing and synthesis-quality filters.

The filters ingest records produced by an external generation pipeline (query
rewriting, entity images, relevance scoring all happen upstream); this module
only decides what survives. Every filter returns disjoint kept/discarded sets
ordered by record id, so outputs are independent of input order.
"""

from __future__ import annotations

import zlib
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, InvalidConfig, QuotaExceedsSource, UnknownId
from .matrix import EmbeddingMatrix
from .search import rank_of

IMAGE_SOURCES = ("generated", "retrieved")

DEFAULT_RANK_TOP_N = 20
DEFAULT_SCORE_THRESHOLD = 0.2
DEFAULT_MIN_CONFIDENCE = 0.5


@dataclass(frozen=True)
class SourceSpec:
    """One training source: either an absolute quota or a sampling weight."""

    name: str
    category: str
    available: int
    quota: int | None = None
    weight: float | None = None

    def __post_init__(self):
        if self.available < 0:
            raise InvalidConfig(f"source {self.name!r} has negative available count")
        if (self.quota is None) == (self.weight is None):
            raise InvalidConfig(f"source {self.name!r} needs exactly one of quota or weight")
        if self.quota is not None and self.quota < 0:
            raise InvalidConfig(f"source {self.name!r} has negative quota")
        if self.weight is not None and self.weight <= 0:
            raise InvalidConfig(f"source {self.name!r} has non-positive weight")


@dataclass
class SynthRecord:
    """One ingested synthetic training record."""

    record_id: str
    query_text: str = ""
    rewritten_query_text: str = ""
    entity: str = ""
    passage_id: str = ""
    image_source: str = "generated"
    image_caption: str = ""
    relevance_score: float | None = None
    domain_label: str | None = None
    domain_confidence: float | None = None

    def __post_init__(self):
        if self.image_source not in IMAGE_SOURCES:
            raise InvalidConfig(
                f"record {self.record_id!r}: image_source must be one of {IMAGE_SOURCES}"
            )
        if self.relevance_score is not None and not np.isfinite(self.relevance_score):
            raise InvalidConfig(f"record {self.record_id!r}: relevance_score is not finite")


@dataclass
class FilterResult:
    kept: list[SynthRecord]
    discarded: list[tuple[SynthRecord, str]]
    flags: list[str] = field(default_factory=list)

    @property
    def discard_fraction(self) -> float:
        total = len(self.kept) + len(self.discarded)
        return len(self.discarded) / total if total else 0.0


def _source_rng(seed: int, name: str) -> np.random.Generator:
    digest = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, digest])))


def _apportion(weights: list[float], total: int) -> list[int]:
    # Largest-remainder apportionment: exact total, deterministic ties by index.
    raw = [w / sum(weights) * total for w in weights]
    counts = [int(r) for r in raw]
    remainders = sorted(
        range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i)
    )
    for i in remainders[: total - sum(counts)]:
        counts[i] += 1
    return counts


def mix(
    sources: Sequence[SourceSpec], total: int | None = None, seed: int = 0
) -> list[tuple[str, int]]:
    """Stratified sample across sources; returns shuffled (source, index) picks.

    Quota sources contribute exactly their quota; weighted sources split the
    remaining ``total`` by largest-remainder apportionment. Sampling is
    without replacement within each source.
    """
    if not sources:
        raise EmptyInput("mix needs at least one source")
    quotas: dict[str, int] = {}
    weighted = [s for s in sources if s.weight is not None]
    fixed = [s for s in sources if s.quota is not None]
    for s in fixed:
        quotas[s.name] = s.quota
    if weighted:
        if total is None:
            raise InvalidConfig("mix of weighted sources needs a total")
        remaining = total - sum(quotas.values())
        if remaining < 0:
            raise InvalidConfig("fixed quotas already exceed the requested total")
        for s, count in zip(weighted, _apportion([s.weight for s in weighted], remaining)):
            quotas[s.name] = count
    elif total is not None and total != sum(quotas.values()):
        raise InvalidConfig(
            f"quotas sum to {sum(quotas.values())} but total {total} was requested"
        )
    for s in sources:
        if quotas[s.name] > s.available:
            raise QuotaExceedsSource(
                f"source {s.name!r}: quota {quotas[s.name]} exceeds available {s.available}"
            )

    picks: list[tuple[str, int]] = []
    for s in sources:
        rng = _source_rng(seed, s.name)
        idx = rng.choice(s.available, size=quotas[s.name], replace=False)
        picks.extend((s.name, int(i)) for i in sorted(idx))
    order = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, len(picks)])))
    perm = order.permutation(len(picks))
    return [picks[int(i)] for i in perm]


def rank_filter(
    records: Sequence[SynthRecord],
    queries: EmbeddingMatrix,
    passages: EmbeddingMatrix,
    qmap: Mapping[str, tuple[str, str]],
    top_n: int = DEFAULT_RANK_TOP_N,
) -> FilterResult:
    """Keep records whose query retrieves its own source passage within ``top_n``."""
    if top_n < 1:
        raise InvalidConfig(f"top_n must be >= 1, got {top_n}")
    kept: list[SynthRecord] = []
    discarded: list[tuple[SynthRecord, str]] = []
    for rec in sorted(records, key=lambda r: r.record_id):
        if rec.record_id not in qmap:
            raise UnknownId(f"record {rec.record_id!r} missing from the query/passage map")
        query_id, passage_id = qmap[rec.record_id]
        rank = rank_of(query_id, passage_id, queries, passages)
        if rank <= top_n:
            kept.append(rec)
        else:
            discarded.append((rec, f"source passage ranked {rank} > top_n {top_n}"))
    return FilterResult(kept=kept, discarded=discarded)


def score_filter(
    records: Sequence[SynthRecord], threshold: float = DEFAULT_SCORE_THRESHOLD
) -> FilterResult:
    """Drop retrieved-image records scoring strictly below the threshold.

    Generated images are always kept (their quality is consistent, so they are
    never scored); a retrieved image with no score at all is discarded with its
    own reason. A score exactly at the threshold is kept.
    """
    kept: list[SynthRecord] = []
    discarded: list[tuple[SynthRecord, str]] = []
    for rec in sorted(records, key=lambda r: r.record_id):
        if rec.image_source == "generated":
            kept.append(rec)
        elif rec.relevance_score is None:
            discarded.append((rec, "retrieved image has no relevance score"))
        elif rec.relevance_score < threshold:
            discarded.append(
                (rec, f"relevance score {rec.relevance_score} below {threshold}")
            )
        else:
            kept.append(rec)
    return FilterResult(kept=kept, discarded=discarded)


def domain_balance(
    records: Sequence[SynthRecord],
    per_domain_quota: int,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
    seed: int = 0,
) -> FilterResult:
    """Uniform per-domain sample over confidently-labeled records.

    A record whose classification confidence is not strictly above
    ``min_confidence`` is dropped. Domains smaller than the quota keep all
    their records and are flagged rather than failing.
    """
    if per_domain_quota < 1:
        raise InvalidConfig(f"per_domain_quota must be >= 1, got {per_domain_quota}")
    confident: dict[str, list[SynthRecord]] = {}
    discarded: list[tuple[SynthRecord, str]] = []
    for rec in sorted(records, key=lambda r: r.record_id):
        if rec.domain_label is None or rec.domain_confidence is None:
            discarded.append((rec, "missing domain label or confidence"))
        elif rec.domain_confidence <= min_confidence:
            discarded.append(
                (rec, f"domain confidence {rec.domain_confidence} not above {min_confidence}")
            )
        else:
            confident.setdefault(rec.domain_label, []).append(rec)

    kept: list[SynthRecord] = []
    flags: list[str] = []
    for domain in sorted(confident):
        pool = confident[domain]
        if len(pool) <= per_domain_quota:
            if len(pool) < per_domain_quota:
                flags.append(
                    f"domain {domain!r} has only {len(pool)} records; quota "
                    f"{per_domain_quota} clamped"
                )
            chosen = pool
        else:
            rng = _source_rng(seed, domain)
            idx = rng.choice(len(pool), size=per_domain_quota, replace=False)
            chosen = [pool[int(i)] for i in sorted(idx)]
            for i in sorted(set(range(len(pool))) - {int(j) for j in idx}):
                discarded.append((pool[i], f"beyond domain quota {per_domain_quota}"))
        kept.extend(chosen)
    kept.sort(key=lambda r: r.record_id)
    discarded.sort(key=lambda t: t[0].record_id)
    return FilterResult(kept=kept, discarded=discarded, flags=flags)
