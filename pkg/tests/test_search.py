from __future__ import annotations

import numpy as np
import pytest

from umre.errors import DimensionMismatch, EmptyPool, UnknownId
from umre.matrix import EmbeddingMatrix, similarity_dense
from umre.search import rank_of, topk

from conftest import random_matrix, rng_for


def full_sort_oracle(queries, candidates, k, exclude=None, *, accumulate_double=False):
    """Independent selection: full similarity matrix, total sort per query."""
    scores = similarity_dense(queries, candidates, accumulate_double=accumulate_double)
    ranks = candidates.id_rank
    out = []
    exclude = exclude or {}
    for i, qid in enumerate(queries.ids):
        banned = exclude.get(qid, set())
        rows = [
            j for j in range(candidates.count) if candidates.id_at(j) not in banned
        ]
        rows.sort(key=lambda j: (-float(scores[i, j]), int(ranks[j])))
        out.append([(candidates.id_at(j), float(scores[i, j])) for j in rows[:k]])
    return out


class TestTopK:
    def test_exact_self_match(self):
        rng = rng_for(0)
        pool = random_matrix(rng, 10, 6)
        query = EmbeddingMatrix(pool.data[7:8].copy(), ["probe"])
        res = topk(query, pool, 1)
        assert res[0].hits[0][0] == 7
        assert res[0].hits[0][1] == pytest.approx(1.0, abs=1e-6)

    def test_tie_broken_by_lowest_id(self):
        pool = EmbeddingMatrix(np.eye(4, dtype=np.float32))
        query = EmbeddingMatrix(np.eye(4, dtype=np.float32)[2:3], ["q"])
        res = topk(query, pool, 2)
        assert res[0].hits[0] == (2, pytest.approx(1.0))
        # Remaining basis rows all score 0; the lowest id must win the tie.
        assert res[0].hits[1][0] == 0

    def test_string_id_tie_is_lexicographic(self):
        pool = EmbeddingMatrix(np.eye(3, dtype=np.float32), ["zz", "mid", "aa"])
        query = EmbeddingMatrix(
            np.array([[1.0, 1.0, 1.0]], dtype=np.float32), ["q"]
        )
        res = topk(query, pool, 3)
        assert [cid for cid, _ in res[0].hits] == ["aa", "mid", "zz"]

    def test_matches_full_sort_oracle(self):
        rng = rng_for(1)
        queries = random_matrix(rng, 50, 32, string_ids=True)
        pool = random_matrix(rng, 10_000, 32)
        res = topk(queries, pool, 10, block_size=1024)
        oracle = full_sort_oracle(queries, pool, 10)
        for r, expected in zip(res, oracle):
            assert r.hits == expected

    def test_block_size_does_not_change_results(self):
        rng = rng_for(2)
        queries = random_matrix(rng, 8, 12)
        pool = random_matrix(rng, 500, 12)
        a = topk(queries, pool, 7, block_size=500)
        b = topk(queries, pool, 7, block_size=13)
        assert [r.hits for r in a] == [r.hits for r in b]

    @pytest.mark.parametrize("workers", [2, 8])
    def test_worker_count_bit_identical(self, workers):
        rng = rng_for(3)
        queries = random_matrix(rng, 600, 16)
        pool = random_matrix(rng, 800, 16)
        base = topk(queries, pool, 5, workers=1)
        alt = topk(queries, pool, 5, workers=workers)
        assert [r.hits for r in base] == [r.hits for r in alt]

    def test_exclude_set_honored(self):
        rng = rng_for(4)
        queries = random_matrix(rng, 5, 8, string_ids=True)
        pool = random_matrix(rng, 50, 8)
        exclude = {qid: {0, 1, 2, 3} for qid in queries.ids}
        res = topk(queries, pool, 50, exclude=exclude)
        for r in res:
            assert not {cid for cid, _ in r.hits} & {0, 1, 2, 3}
            assert len(r.hits) == 46

    def test_monotone_prefix(self):
        rng = rng_for(5)
        queries = random_matrix(rng, 4, 8)
        pool = random_matrix(rng, 100, 8)
        small = topk(queries, pool, 6)
        large = topk(queries, pool, 7)
        for s, l in zip(small, large):
            assert l.hits[:6] == s.hits

    def test_k_of_pool_size_is_total_order(self):
        rng = rng_for(6)
        queries = random_matrix(rng, 3, 8, string_ids=True)
        pool = random_matrix(rng, 40, 8)
        res = topk(queries, pool, 40)
        for r in res:
            assert len(r.hits) == 40
            for position, (cid, _) in enumerate(r.hits, start=1):
                assert rank_of(r.query_id, cid, queries, pool) == position

    def test_empty_pool(self):
        rng = rng_for(7)
        queries = random_matrix(rng, 2, 4)
        empty = EmbeddingMatrix(np.empty((0, 4), dtype=np.float32))
        with pytest.raises(EmptyPool):
            topk(queries, empty, 1)

    def test_dimension_mismatch(self):
        rng = rng_for(8)
        with pytest.raises(DimensionMismatch):
            topk(random_matrix(rng, 2, 4), random_matrix(rng, 2, 5), 1)

    def test_no_duplicate_hits(self):
        rng = rng_for(9)
        queries = random_matrix(rng, 10, 6)
        pool = random_matrix(rng, 200, 6)
        for r in topk(queries, pool, 30):
            ids = [cid for cid, _ in r.hits]
            assert len(ids) == len(set(ids))


class TestRankOf:
    def test_unique_argmax_is_rank_one(self):
        rng = rng_for(10)
        pool = random_matrix(rng, 30, 6)
        query = EmbeddingMatrix(pool.data[11:12].copy(), ["q"])
        assert rank_of("q", 11, query, pool) == 1

    def test_tie_with_lower_id_gives_rank_two(self):
        pool = EmbeddingMatrix(
            np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        )
        query = EmbeddingMatrix(np.array([[1.0, 0.0]], dtype=np.float32), ["q"])
        assert rank_of("q", 1, query, pool) == 2
        assert rank_of("q", 0, query, pool) == 1

    def test_matches_oracle_positions(self):
        rng = rng_for(11)
        queries = random_matrix(rng, 6, 10, string_ids=True)
        pool = random_matrix(rng, 300, 10)
        oracle = full_sort_oracle(queries, pool, 300)
        for qi, qid in enumerate(queries.ids):
            for position, (cid, _) in enumerate(oracle[qi], start=1):
                if position in (1, 150, 300):
                    assert rank_of(qid, cid, queries, pool) == position

    def test_unknown_ids(self):
        rng = rng_for(12)
        queries = random_matrix(rng, 2, 4, string_ids=True)
        pool = random_matrix(rng, 5, 4)
        with pytest.raises(UnknownId):
            rank_of("missing", 0, queries, pool)
        with pytest.raises(UnknownId):
            rank_of(queries.ids[0], 99, queries, pool)
