"""Binary embedding container codec.

Layout (all integers little-endian):

    offset  size  field
    0       4     magic "UMRE" (55 4D 52 45)
    4       2     version (u16) = 1
    6       2     flags (u16): bit0 = rows normalized, bit1 = string-id table
    8       4     dim (u32)
    12      8     count (u64)
    20      1     dtype (u8): 0 = 32-bit float LE
    21      7     reserved, zero

    28      count*dim*4   row-major float32 body
    then, if flags bit1:  per row, u16 id byte length + UTF-8 id bytes

Files without an id table carry implicit integer ids 0..count-1. Round-trips
are bitwise: read(write(m)) reproduces the matrix exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    ContainerFormatError,
    DtypeUnsupported,
    InvalidConfig,
    MissingInputFile,
    NormalizationInvalid,
    TruncatedFile,
    VersionUnsupported,
)
from .matrix import EmbeddingMatrix

MAGIC = b"UMRE"
VERSION = 1
DTYPE_F32 = 0
FLAG_NORMALIZED = 1 << 0
FLAG_STRING_IDS = 1 << 1

_HEADER = struct.Struct("<4sHHIQB7s")
HEADER_SIZE = _HEADER.size  # 28 bytes


def write_container(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Serialize a matrix; implicit integer ids 0..n-1 are stored as no table."""
    ids = matrix.ids
    implicit = all(isinstance(i, int) for i in ids) and ids == list(range(matrix.count))
    if not implicit and not all(isinstance(i, str) for i in ids):
        raise InvalidConfig(
            "only implicit 0..n-1 integer ids or string ids can be serialized"
        )
    flags = 0
    if matrix.normalized:
        flags |= FLAG_NORMALIZED
    if not implicit:
        flags |= FLAG_STRING_IDS
    header = _HEADER.pack(
        MAGIC, VERSION, flags, matrix.dim, matrix.count, DTYPE_F32, b"\x00" * 7
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(matrix.data, dtype="<f4").tobytes())
        if not implicit:
            for rid in ids:
                raw = rid.encode("utf-8")
                if len(raw) > 0xFFFF:
                    raise InvalidConfig(f"id {rid[:32]!r}... exceeds 65535 bytes")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)


def read_container(path: str | Path) -> EmbeddingMatrix:
    """Deserialize a container, honoring the normalized flag.

    When the flag is set, rows are not re-normalized; instead a deterministic
    1% row sample is checked to be unit norm within 1e-3.
    """
    try:
        blob = Path(path).read_bytes()
    except FileNotFoundError:
        raise MissingInputFile(str(path)) from None
    if len(blob) < HEADER_SIZE:
        raise TruncatedFile(f"{path}: {len(blob)} bytes is shorter than the {HEADER_SIZE}-byte header")
    magic, version, flags, dim, count, dtype, _reserved = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} != {MAGIC!r}")
    if version != VERSION:
        raise VersionUnsupported(f"{path}: version {version} (supported: {VERSION})")
    if dtype != DTYPE_F32:
        raise DtypeUnsupported(f"{path}: dtype code {dtype} (supported: {DTYPE_F32})")
    if dim < 1:
        raise ContainerFormatError(f"{path}: dimension {dim} is invalid")

    body_bytes = count * dim * 4
    if len(blob) < HEADER_SIZE + body_bytes:
        raise TruncatedFile(
            f"{path}: body needs {body_bytes} bytes, file holds {len(blob) - HEADER_SIZE}"
        )
    data = np.frombuffer(
        blob, dtype="<f4", count=count * dim, offset=HEADER_SIZE
    ).reshape(count, dim)

    ids = None
    offset = HEADER_SIZE + body_bytes
    if flags & FLAG_STRING_IDS:
        ids = []
        for row in range(count):
            if offset + 2 > len(blob):
                raise TruncatedFile(f"{path}: id table ends early at row {row}")
            (length,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            if offset + length > len(blob):
                raise TruncatedFile(f"{path}: id bytes for row {row} end early")
            try:
                ids.append(blob[offset : offset + length].decode("utf-8"))
            except UnicodeDecodeError:
                raise ContainerFormatError(f"{path}: id for row {row} is not valid UTF-8") from None
            offset += length
    if offset != len(blob):
        raise ContainerFormatError(f"{path}: {len(blob) - offset} surplus bytes after content")

    if not np.all(np.isfinite(data)):
        raise ContainerFormatError(f"{path}: body contains non-finite values")
    if ids is not None and len(set(ids)) != len(ids):
        raise ContainerFormatError(f"{path}: ids are not unique")

    normalized = bool(flags & FLAG_NORMALIZED)
    if normalized and count:
        sample = np.unique(np.linspace(0, count - 1, max(1, count // 100)).astype(int))
        norms = np.linalg.norm(data[sample].astype(np.float64), axis=1)
        if not np.allclose(norms, 1.0, atol=1e-3):
            raise NormalizationInvalid(
                f"{path}: normalized flag set but a sampled row is not unit norm"
            )
    return EmbeddingMatrix(data, ids, normalized=normalized, _skip_checks=True)


def inspect_container(path: str | Path) -> dict:
    """Header summary without loading the body."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(HEADER_SIZE)
    except FileNotFoundError:
        raise MissingInputFile(str(path)) from None
    if len(head) < HEADER_SIZE:
        raise TruncatedFile(f"{path}: {len(head)} bytes is shorter than the header")
    magic, version, flags, dim, count, dtype, _ = _HEADER.unpack(head)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} != {MAGIC!r}")
    return {
        "version": version,
        "dim": dim,
        "count": count,
        "dtype": "float32" if dtype == DTYPE_F32 else f"unknown({dtype})",
        "normalized": bool(flags & FLAG_NORMALIZED),
        "string_ids": bool(flags & FLAG_STRING_IDS),
    }
