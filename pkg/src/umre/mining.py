"""Two-stage hard-negative mining.

Retrieve with a stage-1 model, drop every relevant candidate, and keep the
top-ranked (or window-sampled) non-relevant survivors as hard negatives for
continued training. Selection is deterministic given the seed: per-query RNG
streams are derived from (seed, query id digest), so output is independent of
query order and worker count.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, NoPositives
from .matrix import EmbeddingMatrix, RecordId
from .metrics import Qrels, _as_id_str
from .search import topk


@dataclass(frozen=True)
class MiningConfig:
    """How many candidates to fetch and how to pick negatives among them.

    ``rank_window`` restricts eligible (1-based) retrieval positions, e.g.
    (30, 100) to avoid likely false negatives near the top; disabled by
    default. ``selection`` is ``rank`` (first by retrieval order) or
    ``sample`` (uniform within the window, seeded).
    """

    retrieve_k: int = 100
    negatives_out: int = 8
    rank_window: tuple[int, int] | None = None
    selection: str = "rank"
    seed: int = 0

    def __post_init__(self):
        if self.retrieve_k < 1 or self.negatives_out < 1:
            raise InvalidConfig("retrieve_k and negatives_out must be >= 1")
        if self.negatives_out > self.retrieve_k:
            raise InvalidConfig("negatives_out must not exceed retrieve_k")
        if self.selection not in ("rank", "sample"):
            raise InvalidConfig(f"selection must be 'rank' or 'sample', got {self.selection!r}")
        if self.rank_window is not None:
            lo, hi = self.rank_window
            if not (1 <= lo <= hi <= self.retrieve_k):
                raise InvalidConfig(f"rank_window {self.rank_window} outside [1, retrieve_k]")


@dataclass
class MinedInstance:
    query_id: RecordId
    positive_id: RecordId
    hard_negative_ids: list[RecordId]
    # Set when the window held fewer non-relevant candidates than requested
    # and negatives were padded from ranks beyond it.
    insufficient_window: bool = False


def _query_rng(seed: int, query_id: RecordId) -> np.random.Generator:
    digest = zlib.crc32(_as_id_str(query_id).encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, digest])))


def _pick_positive(judged: dict[str, int]) -> str:
    # Deterministic positive: highest grade, ties by ascending id.
    positives = [cid for cid, g in judged.items() if g > 0]
    top_grade = max(judged[cid] for cid in positives)
    return min(cid for cid in positives if judged[cid] == top_grade)


def mine(
    queries: EmbeddingMatrix,
    candidates: EmbeddingMatrix,
    qrels: Qrels,
    cfg: MiningConfig,
    *,
    workers: int = 1,
) -> list[MinedInstance]:
    """Mine hard negatives for every query in the matrix.

    Every query must have at least one relevant candidate in the judgments.
    Output is ordered by query id.
    """
    judged_by_qid: dict[RecordId, dict[str, int]] = {}
    for qid in queries.ids:
        judged = dict(qrels.get(_as_id_str(qid), {}))
        if not any(g > 0 for g in judged.values()):
            raise NoPositives(f"query {qid!r} has no relevant candidate in the judgments")
        judged_by_qid[qid] = judged

    # Retrieve deeper than retrieve_k so queries whose window is crowded with
    # relevant candidates can still be padded from ranks beyond it.
    max_relevant = max(
        sum(1 for g in judged.values() if g > 0) for judged in judged_by_qid.values()
    )
    depth = min(candidates.count, cfg.retrieve_k + cfg.negatives_out + max_relevant)
    results = topk(queries, candidates, depth, workers=workers)

    instances: list[MinedInstance] = []
    for res in results:
        judged = judged_by_qid[res.query_id]
        relevant = {cid for cid, g in judged.items() if g > 0}
        non_relevant = [
            (pos, cid)
            for pos, (cid, _score) in enumerate(res.hits, start=1)
            if _as_id_str(cid) not in relevant
        ]
        lo, hi = cfg.rank_window if cfg.rank_window else (1, cfg.retrieve_k)
        in_window = [cid for pos, cid in non_relevant if lo <= pos <= hi]
        beyond = [cid for pos, cid in non_relevant if pos > hi]

        insufficient = len(in_window) < cfg.negatives_out
        if cfg.selection == "sample" and len(in_window) > cfg.negatives_out:
            rng = _query_rng(cfg.seed, res.query_id)
            idx = rng.choice(len(in_window), size=cfg.negatives_out, replace=False)
            chosen = [in_window[i] for i in sorted(idx)]
        else:
            chosen = in_window[: cfg.negatives_out]
        if insufficient:
            chosen = chosen + beyond[: cfg.negatives_out - len(chosen)]

        instances.append(
            MinedInstance(
                query_id=res.query_id,
                positive_id=_pick_positive(judged),
                hard_negative_ids=chosen,
                insufficient_window=insufficient,
            )
        )
    instances.sort(key=lambda inst: _as_id_str(inst.query_id))
    return instances
