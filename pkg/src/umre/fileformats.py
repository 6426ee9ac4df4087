"""Text file formats: TREC-style qrels, training-instance and synth-record NDJSON.

All readers raise InputFormatError with the offending line number; all writers
emit byte-deterministic output for identical inputs.
"""

from __future__ import annotations

import json
from pathlib import Path

from .dataflow import SynthRecord
from .errors import InputFormatError, MissingInputFile
from .mining import MinedInstance


def read_qrels(path: str | Path) -> dict[str, dict[str, int]]:
    """Parse whitespace-separated ``query_id iteration candidate_id relevance`` lines.

    The iteration column is ignored; ``#`` starts a comment line; duplicate
    (query, candidate) pairs are an error.
    """
    qrels: dict[str, dict[str, int]] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingInputFile(str(path)) from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 4:
            raise InputFormatError(
                f"expected 4 whitespace-separated fields, got {len(parts)}",
                path=str(path),
                line=lineno,
            )
        qid, _iteration, cid, rel = parts
        try:
            grade = int(rel)
        except ValueError:
            raise InputFormatError(
                f"relevance {rel!r} is not an integer", path=str(path), line=lineno
            ) from None
        if grade < 0:
            raise InputFormatError(
                f"relevance {grade} is negative", path=str(path), line=lineno
            )
        if cid in qrels.get(qid, {}):
            raise InputFormatError(
                f"duplicate judgment for query {qid!r} candidate {cid!r}",
                path=str(path),
                line=lineno,
            )
        qrels.setdefault(qid, {})[cid] = grade
    return qrels


def write_qrels(qrels: dict[str, dict[str, int]], path: str | Path) -> None:
    lines = []
    for qid in sorted(qrels):
        for cid in sorted(qrels[qid]):
            lines.append(f"{qid} 0 {cid} {qrels[qid][cid]}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


_INSTANCE_KEYS = {"query_id", "positive_id", "negative_ids", "insufficient_window"}


def write_instances(instances: list[MinedInstance], path: str | Path) -> None:
    """Write mined instances as NDJSON, one instance per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            record: dict = {
                "query_id": inst.query_id,
                "positive_id": inst.positive_id,
                "negative_ids": list(inst.hard_negative_ids),
            }
            if inst.insufficient_window:
                record["insufficient_window"] = True
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def read_instances(path: str | Path) -> list[MinedInstance]:
    instances: list[MinedInstance] = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingInputFile(str(path)) from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"invalid JSON: {exc.msg}", path=str(path), line=lineno) from None
        if not isinstance(record, dict):
            raise InputFormatError("instance line is not an object", path=str(path), line=lineno)
        unknown = set(record) - _INSTANCE_KEYS
        if unknown:
            raise InputFormatError(
                f"unknown keys {sorted(unknown)}", path=str(path), line=lineno
            )
        missing = {"query_id", "positive_id", "negative_ids"} - set(record)
        if missing:
            raise InputFormatError(
                f"missing keys {sorted(missing)}", path=str(path), line=lineno
            )
        negatives = record["negative_ids"]
        if not isinstance(negatives, list) or not negatives:
            raise InputFormatError("negative_ids must be a non-empty list", path=str(path), line=lineno)
        if record["positive_id"] in negatives:
            raise InputFormatError(
                "positive_id also appears among negative_ids", path=str(path), line=lineno
            )
        if len(set(map(str, negatives))) != len(negatives):
            raise InputFormatError("negative_ids contains duplicates", path=str(path), line=lineno)
        instances.append(
            MinedInstance(
                query_id=record["query_id"],
                positive_id=record["positive_id"],
                hard_negative_ids=list(negatives),
                insufficient_window=bool(record.get("insufficient_window", False)),
            )
        )
    return instances


_SYNTH_REQUIRED = {"record_id"}
_SYNTH_OPTIONAL = {
    "query_text",
    "rewritten_query_text",
    "entity",
    "passage_id",
    "image_source",
    "image_caption",
    "relevance_score",
    "domain_label",
    "domain_confidence",
}


def read_synth_records(path: str | Path) -> list[SynthRecord]:
    records: list[SynthRecord] = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise MissingInputFile(str(path)) from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"invalid JSON: {exc.msg}", path=str(path), line=lineno) from None
        if not isinstance(raw, dict):
            raise InputFormatError("record line is not an object", path=str(path), line=lineno)
        unknown = set(raw) - _SYNTH_REQUIRED - _SYNTH_OPTIONAL
        if unknown:
            raise InputFormatError(f"unknown keys {sorted(unknown)}", path=str(path), line=lineno)
        if "record_id" not in raw:
            raise InputFormatError("missing record_id", path=str(path), line=lineno)
        try:
            records.append(SynthRecord(**raw))
        except Exception as exc:
            raise InputFormatError(str(exc), path=str(path), line=lineno) from None
    return records


def write_synth_records(records: list[SynthRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            payload = {
                "record_id": rec.record_id,
                "query_text": rec.query_text,
                "rewritten_query_text": rec.rewritten_query_text,
                "entity": rec.entity,
                "passage_id": rec.passage_id,
                "image_source": rec.image_source,
                "image_caption": rec.image_caption,
            }
            if rec.relevance_score is not None:
                payload["relevance_score"] = rec.relevance_score
            if rec.domain_label is not None:
                payload["domain_label"] = rec.domain_label
            if rec.domain_confidence is not None:
                payload["domain_confidence"] = rec.domain_confidence
            fh.write(json.dumps(payload, separators=(",", ":")) + "\n")
