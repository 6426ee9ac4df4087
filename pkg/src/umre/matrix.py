"""Embedding storage, normalization, and similarity kernels.

Vectors are stored in single precision. Dot products optionally accumulate in
double precision (`accumulate_double`): on for loss/metric paths where
reproducible math matters, off for bulk search scans.
"""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from typing import Union

import numpy as np

from .errors import DimensionMismatch, UnknownId, ZeroVector

RecordId = Union[str, int]

# Raw L2 norms at or below this are treated as the zero vector.
ZERO_NORM_THRESHOLD = 1e-12

DEFAULT_BLOCK_SIZE = 65536


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale ``v`` to unit L2 norm, preserving direction.

    Raises ZeroVector when the norm is at or below the fixed 1e-12 cutoff.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a 1-d vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ZeroVector("vector has non-finite entries")
    norm = float(np.linalg.norm(v))
    if norm <= ZERO_NORM_THRESHOLD:
        raise ZeroVector(f"norm {norm!r} is at or below {ZERO_NORM_THRESHOLD}")
    return v / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    an = l2_normalize(a)
    bn = l2_normalize(b)
    return float(np.clip(an @ bn, -1.0, 1.0))


class EmbeddingMatrix:
    """Immutable row-major collection of fixed-dimension float32 vectors with ids.

    Ids are either all strings or all integers; a matrix built without explicit
    ids gets implicit integer ids 0..count-1. Instances are safe for concurrent
    reads.
    """

    __slots__ = ("_data", "_ids", "_index", "_id_rank", "normalized")

    def __init__(
        self,
        data: np.ndarray,
        ids: Sequence[RecordId] | None = None,
        *,
        normalized: bool = False,
        _skip_checks: bool = False,
    ):
        data = np.ascontiguousarray(data, dtype=np.float32)
        if data.ndim != 2:
            raise DimensionMismatch(f"expected a 2-d array, got shape {data.shape}")
        if data.shape[1] < 1:
            raise DimensionMismatch("vector dimension must be >= 1")
        if ids is None:
            ids = list(range(data.shape[0]))
        else:
            ids = list(ids)
        if len(ids) != data.shape[0]:
            raise DimensionMismatch(f"{len(ids)} ids for {data.shape[0]} rows")
        if not _skip_checks:
            if not np.all(np.isfinite(data)):
                raise ZeroVector("matrix has non-finite entries")
            if len(set(ids)) != len(ids):
                raise ValueError("ids are not unique")
            if normalized:
                norms = np.linalg.norm(data.astype(np.float64), axis=1)
                if data.shape[0] and not np.allclose(norms, 1.0, atol=1e-4):
                    raise ZeroVector("matrix flagged normalized has a non-unit row")
        self._data = data
        self._data.setflags(write=False)
        self._ids = ids
        self._index = {rid: i for i, rid in enumerate(ids)}
        # Rank of each row's id in ascending id order; used for tie-breaking.
        self._id_rank = _id_ranks(ids)
        self.normalized = normalized

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def ids(self) -> list[RecordId]:
        return list(self._ids)

    @property
    def dim(self) -> int:
        return self._data.shape[1]

    @property
    def count(self) -> int:
        return self._data.shape[0]

    @property
    def id_rank(self) -> np.ndarray:
        return self._id_rank

    def __len__(self) -> int:
        return self.count

    def id_at(self, row: int) -> RecordId:
        return self._ids[row]

    def row_of(self, record_id: RecordId) -> int:
        try:
            return self._index[record_id]
        except KeyError:
            raise UnknownId(repr(record_id)) from None

    def __contains__(self, record_id: RecordId) -> bool:
        return record_id in self._index

    def normalize(self) -> "EmbeddingMatrix":
        """Return a row-normalized copy (or self when already flagged)."""
        if self.normalized:
            return self
        norms = np.linalg.norm(self._data.astype(np.float64), axis=1)
        if np.any(norms <= ZERO_NORM_THRESHOLD):
            bad = int(np.argmax(norms <= ZERO_NORM_THRESHOLD))
            raise ZeroVector(f"row {bad} (id {self._ids[bad]!r}) has zero norm")
        data = (self._data.astype(np.float64) / norms[:, None]).astype(np.float32)
        return EmbeddingMatrix(data, self._ids, normalized=True, _skip_checks=True)


def _id_ranks(ids: Sequence[RecordId]) -> np.ndarray:
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    ranks = np.empty(len(ids), dtype=np.int64)
    for rank, row in enumerate(order):
        ranks[row] = rank
    return ranks


def similarity_blocks(
    queries: EmbeddingMatrix,
    candidates: EmbeddingMatrix,
    *,
    block_size: int = DEFAULT_BLOCK_SIZE,
    accumulate_double: bool = True,
) -> Iterator[tuple[int, int, np.ndarray]]:
    """Stream cosine scores in candidate blocks.

    Yields ``(start, stop, scores)`` where ``scores[i, j]`` is the cosine of
    query row ``i`` against candidate row ``start + j``. Block boundaries
    depend only on ``block_size``, so any consumer that merges blocks in order
    is deterministic regardless of how it schedules work.
    """
    if queries.dim != candidates.dim:
        raise DimensionMismatch(f"query dim {queries.dim} != candidate dim {candidates.dim}")
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    q = queries.normalize().data
    c = candidates.normalize().data
    if accumulate_double:
        q = q.astype(np.float64)
    for start in range(0, candidates.count, block_size):
        stop = min(start + block_size, candidates.count)
        block = c[start:stop]
        if accumulate_double:
            scores = q @ block.astype(np.float64).T
        else:
            scores = q @ block.T
        yield start, stop, scores


def similarity_dense(
    queries: EmbeddingMatrix,
    candidates: EmbeddingMatrix,
    *,
    block_size: int = DEFAULT_BLOCK_SIZE,
    accumulate_double: bool = True,
) -> np.ndarray:
    """Full queries x candidates cosine matrix, assembled from the blocked kernel."""
    dtype = np.float64 if accumulate_double else np.float32
    out = np.empty((queries.count, candidates.count), dtype=dtype)
    for start, stop, scores in similarity_blocks(
        queries, candidates, block_size=block_size, accumulate_double=accumulate_double
    ):
        out[:, start:stop] = scores
    return out
