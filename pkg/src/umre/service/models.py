"""Request/response models for the service API.

Jobs reference files on the service host's filesystem; responses return the
computed report plus the paths of any artifacts written.
"""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, ConfigDict


class EvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    manifest_path: str
    out_dir: str
    workers: Optional[int] = None
    category: Optional[str] = None
    metric_override: Optional[str] = None


class EvalResponse(BaseModel):
    report: dict[str, Any]
    report_path: str
    table_path: str


class MineRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    job_path: str
    out_path: str
    workers: Optional[int] = None
    seed: Optional[int] = None


class MineResponse(BaseModel):
    instances_path: str
    instance_count: int
    flagged_count: int


class FilterRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    records_path: str
    out_dir: str
    queries_path: Optional[str] = None
    passages_path: Optional[str] = None
    top_n: int = 20
    threshold: float = 0.2
    min_confidence: float = 0.5
    domain_quota: Optional[int] = None
    seed: int = 0


class FilterResponse(BaseModel):
    report: dict[str, Any]
    kept_path: str
    discarded_path: str
    report_path: str


class TrainToyRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    manifest_path: str
    out_dir: str


class TrainToyResponse(BaseModel):
    summary: dict[str, Any]
    out_dir: str


class ContainerInspectRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    path: str


class ErrorBody(BaseModel):
    kind: str
    message: str
