"""Stand-alone writer for the engine's embedding container format.

Implemented against the wire format, not the engine's code, so a container
written here is an independent check of cross-boundary byte compatibility:

    magic "UMRE" | version u16=1 | flags u16 | dim u32 | count u64
    | dtype u8=0 (float32 LE) | 7 zero bytes | row-major body
    | optional id table (u16 length + UTF-8 per row)

Flags: bit0 = rows are L2-normalized, bit1 = id table present. All integers
little-endian.
"""

from __future__ import annotations

import struct
from collections.abc import Sequence
from pathlib import Path

import numpy as np

MAGIC = b"UMRE"
VERSION = 1
FLAG_NORMALIZED = 1 << 0
FLAG_STRING_IDS = 1 << 1

_HEADER = struct.Struct("<4sHHIQB7s")


def pack_header(dim: int, count: int, *, normalized: bool, string_ids: bool) -> bytes:
    flags = (FLAG_NORMALIZED if normalized else 0) | (FLAG_STRING_IDS if string_ids else 0)
    return _HEADER.pack(MAGIC, VERSION, flags, dim, count, 0, b"\x00" * 7)


def pack_id_table(ids: Sequence[str]) -> bytes:
    chunks = []
    for rid in ids:
        raw = rid.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
    return b"".join(chunks)


def write_container_file(
    path: str | Path,
    body: bytes,
    ids: Sequence[str],
    dim: int,
    *,
    normalized: bool = True,
) -> None:
    """Assemble the final container from an already-encoded float32 body."""
    count = len(ids)
    if len(body) != count * dim * 4:
        raise ValueError(f"body holds {len(body)} bytes, expected {count * dim * 4}")
    with open(path, "wb") as fh:
        fh.write(pack_header(dim, count, normalized=normalized, string_ids=True))
        fh.write(body)
        fh.write(pack_id_table(ids))


def encode_rows(vectors: np.ndarray) -> bytes:
    return np.ascontiguousarray(vectors, dtype="<f4").tobytes()
