"""Run an external embedding model over a dataset and write engine files.

The embedding callable is injected, so the bridge works with any model family.
Exports are resumable: progress lands in a ``.part`` body plus a sidecar after
every batch, and a rerun of an interrupted job continues where it stopped,
producing a file byte-identical to an uninterrupted run (the embedder must be
deterministic for that guarantee, like any cache).
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container_writer import encode_rows, write_container_file
from .errors import DatasetFormatError, EmbedderOutputError, JobConfigError
from .instructions import instruction_for

EmbedFn = Callable[[dict], Sequence[float]]

SIDES = ("query", "candidate")


@dataclass(frozen=True)
class ExportJob:
    """One export: a dataset file, a side, and where the container goes.

    ``instruction`` conditions query payloads only; on the candidate side it
    is ignored no matter what the config says. When ``instruction`` is None a
    default template is looked up from ``task`` / ``dataset_name``.
    """

    dataset_path: str
    output_path: str
    side: str
    instruction: str | None = None
    task: str | None = None
    dataset_name: str | None = None
    batch_size: int = 32

    def __post_init__(self):
        if self.side not in SIDES:
            raise JobConfigError(f"side must be one of {SIDES}, got {self.side!r}")
        if self.batch_size < 1:
            raise JobConfigError("batch_size must be >= 1")

    def resolved_instruction(self) -> str | None:
        if self.side != "query":
            return None
        if self.instruction is not None:
            return self.instruction
        return instruction_for(self.task, self.dataset_name)


def read_dataset(path: str | Path) -> list[dict]:
    """NDJSON records, each with a unique string ``id`` and a ``text`` field."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DatasetFormatError(f"dataset file {path} does not exist") from None
    items: list[dict] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
        if not isinstance(record, dict) or "id" not in record or "text" not in record:
            raise DatasetFormatError(f"{path}:{lineno}: record needs 'id' and 'text' fields")
        rid = str(record["id"])
        if rid in seen:
            raise DatasetFormatError(f"{path}:{lineno}: duplicate id {rid!r}")
        seen.add(rid)
        record["id"] = rid
        items.append(record)
    return items


def compose_payload(text: str, instruction: str | None) -> str:
    if instruction is None:
        return text
    return f"Instruct: {instruction}\nQuery: {text}"


def _job_fingerprint(job: ExportJob, ids: list[str], instruction: str | None) -> str:
    digest = hashlib.sha256()
    digest.update(job.side.encode())
    digest.update(b"\x00")
    digest.update((instruction or "").encode())
    for rid in ids:
        digest.update(b"\x00")
        digest.update(rid.encode())
    return digest.hexdigest()


def _embed_batch(embed_fn: EmbedFn, batch: list[dict], start_index: int, dim: int | None):
    if getattr(embed_fn, "reentrant", False):
        with ThreadPoolExecutor(max_workers=4) as pool:
            raw = list(pool.map(embed_fn, batch))
    else:
        raw = [embed_fn(item) for item in batch]
    rows = np.empty((len(batch), dim if dim else len(np.atleast_1d(raw[0]))), dtype=np.float64)
    for offset, (item, vec) in enumerate(zip(batch, raw)):
        arr = np.asarray(vec, dtype=np.float64)
        index = start_index + offset
        if arr.ndim != 1:
            raise EmbedderOutputError(index, item["id"], f"expected a 1-d vector, got shape {arr.shape}")
        if dim is None:
            dim = arr.shape[0]
            if rows.shape[1] != dim:
                rows = np.empty((len(batch), dim), dtype=np.float64)
        if arr.shape[0] != dim:
            raise EmbedderOutputError(
                index, item["id"], f"dimension drifted to {arr.shape[0]} (batch dimension is {dim})"
            )
        if not np.all(np.isfinite(arr)):
            raise EmbedderOutputError(index, item["id"], "vector has non-finite entries")
        norm = np.linalg.norm(arr)
        if norm <= 1e-12:
            raise EmbedderOutputError(index, item["id"], "vector has (near-)zero norm")
        rows[offset] = arr / norm
    return rows, dim


def export(job: ExportJob, embed_fn: EmbedFn) -> dict:
    """Embed a dataset side into a normalized container; resumable per batch."""
    items = read_dataset(job.dataset_path)
    if not items:
        raise DatasetFormatError(f"dataset {job.dataset_path} has no records")
    ids = [item["id"] for item in items]
    instruction = job.resolved_instruction()
    fingerprint = _job_fingerprint(job, ids, instruction)

    out = Path(job.output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    part = out.with_name(out.name + ".part")
    sidecar = out.with_name(out.name + ".progress.json")

    done = 0
    dim: int | None = None
    if sidecar.is_file() and part.is_file():
        try:
            state = json.loads(sidecar.read_text())
        except json.JSONDecodeError:
            state = None
        if (
            state
            and state.get("fingerprint") == fingerprint
            and state.get("count") == len(items)
            and part.stat().st_size == state.get("items_done", 0) * state.get("dim", 0) * 4
        ):
            done = int(state["items_done"])
            dim = int(state["dim"])
        else:
            part.unlink()
            sidecar.unlink()
    elif part.exists() or sidecar.exists():
        # Half a resume state is useless; start over.
        part.unlink(missing_ok=True)
        sidecar.unlink(missing_ok=True)

    resumed_from = done
    with open(part, "ab") as body:
        for start in range(done, len(items), job.batch_size):
            batch = items[start : start + job.batch_size]
            payloads = [
                {**item, "text": compose_payload(item["text"], instruction)} for item in batch
            ]
            rows, dim = _embed_batch(embed_fn, payloads, start, dim)
            body.write(encode_rows(rows))
            body.flush()
            done = start + len(batch)
            sidecar.write_text(
                json.dumps(
                    {
                        "items_done": done,
                        "dim": dim,
                        "count": len(items),
                        "fingerprint": fingerprint,
                    }
                )
            )

    write_container_file(out, part.read_bytes(), ids, dim, normalized=True)
    part.unlink()
    sidecar.unlink()
    return {
        "path": str(out),
        "count": len(items),
        "dim": dim,
        "resumed_from": resumed_from,
        "side": job.side,
        "instruction": instruction,
    }


def export_qrels(dataset_path: str | Path, out_path: str | Path) -> int:
    """Write TREC-style judgments from query records carrying a ``relevant`` map."""
    items = read_dataset(dataset_path)
    lines = []
    for item in items:
        relevant = item.get("relevant")
        if relevant is None:
            continue
        if not isinstance(relevant, dict):
            raise DatasetFormatError(f"record {item['id']!r}: 'relevant' must be a mapping")
        for cid in sorted(relevant):
            grade = relevant[cid]
            if not isinstance(grade, int) or grade < 0:
                raise DatasetFormatError(
                    f"record {item['id']!r}: relevance for {cid!r} must be a non-negative integer"
                )
            lines.append(f"{item['id']} 0 {cid} {grade}")
    Path(out_path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return len(lines)
