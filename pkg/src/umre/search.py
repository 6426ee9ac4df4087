"""Exact top-k retrieval with deterministic tie-breaking.

Brute-force blocked scan; no approximate indexes. Ties on score are broken by
ascending candidate id (numeric for implicit integer ids, lexicographic for
string ids), and scores are compared exactly as computed in single precision,
so results are bit-identical for any worker count or block size.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyPool
from .matrix import DEFAULT_BLOCK_SIZE, EmbeddingMatrix, RecordId

WORKERS_ENV_VAR = "UMRE_WORKERS"


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV_VAR, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class TopKResult:
    query_id: RecordId
    hits: list[tuple[RecordId, float]]


def _select_topk(
    scores: np.ndarray, id_ranks: np.ndarray, row_indices: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-k of one score vector by (score desc, id rank asc).

    Entries masked to -inf are dropped. Returns (scores, id_ranks, row_indices)
    of the winners, ordered.
    """
    n = scores.shape[0]
    if n > k:
        # Partition, then widen to every candidate tied with the k-th score so
        # the id tie-break is applied to the full tie group.
        part = np.argpartition(scores, n - k)[n - k :]
        threshold = scores[part].min()
        keep = np.nonzero(scores >= threshold)[0]
    else:
        keep = np.arange(n)
    keep = keep[scores[keep] != -np.inf]
    order = np.lexsort((id_ranks[keep], -scores[keep].astype(np.float64)))[:k]
    sel = keep[order]
    return scores[sel], id_ranks[sel], row_indices[sel]


def _scan_query_chunk(
    q_block: np.ndarray,
    candidates: EmbeddingMatrix,
    cand_data: np.ndarray,
    k: int,
    exclude_rows: list[np.ndarray],
    block_size: int,
    accumulate_double: bool,
) -> list[list[tuple[RecordId, float]]]:
    cand_ranks = candidates.id_rank
    n_q = q_block.shape[0]
    best_scores = [np.empty(0, dtype=cand_data.dtype) for _ in range(n_q)]
    best_ranks = [np.empty(0, dtype=np.int64) for _ in range(n_q)]
    best_rows = [np.empty(0, dtype=np.int64) for _ in range(n_q)]

    for start in range(0, candidates.count, block_size):
        stop = min(start + block_size, candidates.count)
        block = cand_data[start:stop]
        if accumulate_double:
            scores = q_block.astype(np.float64) @ block.astype(np.float64).T
        else:
            scores = q_block @ block.T
        rows = np.arange(start, stop, dtype=np.int64)
        ranks = cand_ranks[start:stop]
        for i in range(n_q):
            s = scores[i]
            excl = exclude_rows[i]
            if excl.size:
                local = excl[(excl >= start) & (excl < stop)] - start
                if local.size:
                    s = s.copy()
                    s[local] = -np.inf
            bs, br, bw = _select_topk(s, ranks, rows, k)
            if best_scores[i].size:
                bs = np.concatenate((best_scores[i], bs))
                br = np.concatenate((best_ranks[i], br))
                bw = np.concatenate((best_rows[i], bw))
            best_scores[i], best_ranks[i], best_rows[i] = _select_topk(bs, br, bw, k)

    out = []
    for i in range(n_q):
        out.append(
            [
                (candidates.id_at(int(row)), float(score))
                for row, score in zip(best_rows[i], best_scores[i])
            ]
        )
    return out


def topk(
    queries: EmbeddingMatrix,
    candidates: EmbeddingMatrix,
    k: int,
    exclude: dict[RecordId, set[RecordId]] | None = None,
    *,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
    accumulate_double: bool = False,
) -> list[TopKResult]:
    """For each query, the k highest-cosine candidates outside its exclude set."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if candidates.count == 0:
        raise EmptyPool("candidate pool is empty")
    if queries.dim != candidates.dim:
        raise DimensionMismatch(f"query dim {queries.dim} != candidate dim {candidates.dim}")

    qn = queries.normalize()
    cn = candidates.normalize()
    exclude = exclude or {}
    exclude_rows: list[np.ndarray] = []
    for qid in qn.ids:
        rows = sorted(
            cn.row_of(cid) for cid in exclude.get(qid, ()) if cid in cn
        )
        exclude_rows.append(np.asarray(rows, dtype=np.int64))

    # Fixed query chunking independent of the worker count: results are merged
    # by chunk position, so any scheduling of chunks yields identical output.
    chunk = max(1, min(qn.count, 256))
    tasks = []
    for start in range(0, qn.count, chunk):
        stop = min(start + chunk, qn.count)
        tasks.append((qn.data[start:stop], exclude_rows[start:stop]))

    def run(task):
        q_block, excl = task
        return _scan_query_chunk(q_block, cn, cn.data, k, excl, block_size, accumulate_double)

    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunk_hits = list(pool.map(run, tasks))
    else:
        chunk_hits = [run(t) for t in tasks]

    results: list[TopKResult] = []
    qids = qn.ids
    row = 0
    for hits_block in chunk_hits:
        for hits in hits_block:
            results.append(TopKResult(query_id=qids[row], hits=hits))
            row += 1
    return results


def rank_of(
    query_id: RecordId,
    target_candidate_id: RecordId,
    queries: EmbeddingMatrix,
    candidates: EmbeddingMatrix,
    *,
    block_size: int = DEFAULT_BLOCK_SIZE,
    accumulate_double: bool = False,
) -> int:
    """1-based rank of the target candidate under the same ordering as topk."""
    if queries.dim != candidates.dim:
        raise DimensionMismatch(f"query dim {queries.dim} != candidate dim {candidates.dim}")
    q_row = queries.row_of(query_id)
    t_row = candidates.row_of(target_candidate_id)

    qn = queries.normalize()
    cn = candidates.normalize()
    qv = qn.data[q_row : q_row + 1]
    ranks = cn.id_rank
    t_rank = ranks[t_row]

    # Score the whole pool with the same blocked kernel topk uses, so the
    # target's own score comes out of the identical float path.
    dtype = np.float64 if accumulate_double else np.float32
    scores = np.empty(cn.count, dtype=dtype)
    for start in range(0, cn.count, block_size):
        stop = min(start + block_size, cn.count)
        block = cn.data[start:stop]
        if accumulate_double:
            scores[start:stop] = (qv.astype(np.float64) @ block.astype(np.float64).T)[0]
        else:
            scores[start:stop] = (qv @ block.T)[0]

    target_score = scores[t_row]
    better = int(np.count_nonzero(scores > target_score))
    ties = scores == target_score
    better += int(np.count_nonzero(ranks[ties] < t_rank))
    return better + 1
