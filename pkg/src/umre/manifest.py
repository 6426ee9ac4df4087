"""Task manifests and default metric routing.

Manifests are strict JSON: unknown keys are errors, categories must come from
the nine-tag task taxonomy, and every diagnostic carries a JSON-path location
so a typo points at its own line.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from .errors import EngineError, InputFormatError, MissingInputFile
from .metrics import MetricKind, MetricSpec

CATEGORIES = (
    "T->T",
    "I->I",
    "T->I",
    "T->VD",
    "I->T",
    "T->IT",
    "IT->T",
    "IT->I",
    "IT->IT",
)

CATEGORY_GROUPS = {
    "Single-Modal": ("T->T", "I->I"),
    "Cross-Modal": ("T->I", "T->VD", "I->T"),
    "Fused-Modal": ("T->IT", "IT->T", "IT->I", "IT->IT"),
}


class TaskSpecModel(BaseModel):
    """One benchmark dataset entry."""

    model_config = ConfigDict(extra="forbid")

    name: str
    category: str
    queries: str
    candidates: str
    qrels: str
    metric: Optional[str] = None
    recall10: bool = False
    instruction: Optional[str] = None

    @field_validator("category")
    @classmethod
    def _category_known(cls, v: str) -> str:
        if v not in CATEGORIES:
            raise ValueError(f"category {v!r} is not one of {list(CATEGORIES)}")
        return v

    @field_validator("metric")
    @classmethod
    def _metric_parses(cls, v: Optional[str]) -> Optional[str]:
        if v is not None:
            try:
                MetricSpec.parse(v)
            except EngineError as exc:
                raise ValueError(str(exc)) from None
        return v


class ManifestModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    datasets: list[TaskSpecModel]
    seed: Optional[int] = None

    @field_validator("datasets")
    @classmethod
    def _nonempty_unique(cls, v: list[TaskSpecModel]) -> list[TaskSpecModel]:
        if not v:
            raise ValueError("manifest has no datasets")
        names = [d.name for d in v]
        if len(set(names)) != len(names):
            raise ValueError("dataset names are not unique")
        return v


def default_metric(category: str, recall10: bool = False) -> MetricSpec:
    """Default routing: NDCG@10 for T->T, NDCG@5 for T->VD, Recall@10 for
    datasets flagged recall10, Recall@5 otherwise."""
    if recall10:
        return MetricSpec(MetricKind.RECALL, 10)
    if category == "T->T":
        return MetricSpec(MetricKind.NDCG, 10)
    if category == "T->VD":
        return MetricSpec(MetricKind.NDCG, 5)
    return MetricSpec(MetricKind.RECALL, 5)


def resolve_metric(spec: TaskSpecModel, global_override: str | None = None) -> MetricSpec:
    """A run-wide override beats the dataset's own override, which beats routing."""
    if global_override is not None:
        return MetricSpec.parse(global_override)
    if spec.metric is not None:
        return MetricSpec.parse(spec.metric)
    return default_metric(spec.category, spec.recall10)


def load_manifest(path: str | Path) -> tuple[ManifestModel, str]:
    """Parse and validate a manifest; returns the model plus its sha256."""
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise MissingInputFile(str(path)) from None
    digest = hashlib.sha256(raw).hexdigest()
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InputFormatError(
            f"invalid JSON: {exc.msg}", path=str(path), line=exc.lineno
        ) from None
    try:
        model = ManifestModel.model_validate(payload)
    except ValidationError as exc:
        issues = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        )
        raise InputFormatError(issues, path=str(path)) from None
    return model, digest
