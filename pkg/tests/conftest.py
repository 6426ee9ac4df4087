from __future__ import annotations

import numpy as np
import pytest

from umre.container import write_container
from umre.fileformats import write_qrels
from umre.matrix import EmbeddingMatrix


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def random_matrix(
    rng: np.random.Generator, count: int, dim: int, *, string_ids: bool = False
) -> EmbeddingMatrix:
    data = rng.normal(size=(count, dim)).astype(np.float32)
    ids = [f"id-{i:05d}" for i in range(count)] if string_ids else None
    return EmbeddingMatrix(data, ids)


@pytest.fixture
def make_eval_dataset(tmp_path):
    """Write a small query/candidate/qrels triple; returns a manifest entry."""

    def build(name, *, category="T->T", n_queries=6, n_candidates=40, dim=8, seed=0, **extra):
        rng = rng_for(seed)
        qids = [f"{name}-q{i}" for i in range(n_queries)]
        cids = [f"{name}-c{i}" for i in range(n_candidates)]
        queries = EmbeddingMatrix(rng.normal(size=(n_queries, dim)).astype(np.float32), qids)
        candidates = EmbeddingMatrix(rng.normal(size=(n_candidates, dim)).astype(np.float32), cids)
        qrels = {
            qid: {
                cid: int(g)
                for cid, g in zip(
                    rng.choice(cids, size=4, replace=False), rng.integers(1, 4, size=4)
                )
            }
            for qid in qids
        }
        qpath = tmp_path / f"{name}-queries.umre"
        cpath = tmp_path / f"{name}-candidates.umre"
        rpath = tmp_path / f"{name}-qrels.txt"
        write_container(queries, qpath)
        write_container(candidates, cpath)
        write_qrels(qrels, rpath)
        entry = {
            "name": name,
            "category": category,
            "queries": str(qpath),
            "candidates": str(cpath),
            "qrels": str(rpath),
        }
        entry.update(extra)
        return entry, queries, candidates, qrels

    return build
