"""Deterministic text embedders for wiring tests and dry runs.

The hash embedder maps whitespace tokens to signed one-hot features, the same
on every platform and run, so exported containers are reproducible without any
model download.
"""

from __future__ import annotations

import zlib

import numpy as np


class HashEmbedder:
    """Bag-of-hashed-tokens embedder; deterministic and dependency-free."""

    reentrant = True

    def __init__(self, dim: int = 32, seed: int = 0):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.seed = seed

    def __call__(self, item: dict) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        tokens = str(item["text"]).split() or ["<empty>"]
        for token in tokens:
            digest = zlib.crc32(f"{self.seed}:{token}".encode("utf-8"))
            v[digest % self.dim] += 1.0 if (digest >> 17) & 1 else -1.0
        if not np.any(v):
            v[0] = 1.0
        return v


class RecordingEmbedder:
    """Wraps an embedder and keeps every payload it was asked to embed."""

    def __init__(self, inner):
        self.inner = inner
        self.seen: list[dict] = []

    def __call__(self, item: dict):
        self.seen.append(dict(item))
        return self.inner(item)


class FailAfter:
    """Raises after N successful calls; lets tests interrupt an export."""

    def __init__(self, inner, n_calls: int):
        self.inner = inner
        self.remaining = n_calls

    def __call__(self, item: dict):
        if self.remaining <= 0:
            raise RuntimeError("injected embedder failure")
        self.remaining -= 1
        return self.inner(item)
