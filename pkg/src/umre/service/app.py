"""FastAPI service wrapping the engine.

Engine errors surface as a structured ``{"error": {"kind", "message"}}``
envelope: malformed inputs map to 422, missing files to 404, other engine
failures to 400. Clients key their behavior off ``kind``, not the status.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..container import inspect_container
from ..engine import run_eval, run_filter, run_mine, run_train_toy
from ..errors import EngineError, InputFormatError, MissingInputFile
from .models import (
    ContainerInspectRequest,
    EvalRequest,
    EvalResponse,
    FilterRequest,
    FilterResponse,
    MineRequest,
    MineResponse,
    TrainToyRequest,
    TrainToyResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(title="umre", version=__version__)

    @app.exception_handler(EngineError)
    async def engine_error_handler(_request: Request, exc: EngineError) -> JSONResponse:
        if isinstance(exc, InputFormatError):
            status = 422
        elif isinstance(exc, MissingInputFile):
            status = 404
        else:
            status = 400
        return JSONResponse(
            status_code=status,
            content={"error": {"kind": exc.kind, "message": str(exc)}},
        )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/eval", response_model=EvalResponse)
    def eval_run(req: EvalRequest) -> EvalResponse:
        report = run_eval(
            req.manifest_path,
            req.out_dir,
            workers=req.workers,
            category=req.category,
            metric_override=req.metric_override,
        )
        out = Path(req.out_dir)
        return EvalResponse(
            report=report,
            report_path=str(out / "report.json"),
            table_path=str(out / "report.txt"),
        )

    @app.post("/mine", response_model=MineResponse)
    def mine_run(req: MineRequest) -> MineResponse:
        result = run_mine(req.job_path, req.out_path, workers=req.workers, seed=req.seed)
        return MineResponse(**result)

    @app.post("/filter", response_model=FilterResponse)
    def filter_run(req: FilterRequest) -> FilterResponse:
        report = run_filter(
            req.records_path,
            req.out_dir,
            queries_path=req.queries_path,
            passages_path=req.passages_path,
            top_n=req.top_n,
            threshold=req.threshold,
            min_confidence=req.min_confidence,
            domain_quota=req.domain_quota,
            seed=req.seed,
        )
        out = Path(req.out_dir)
        return FilterResponse(
            report=report,
            kept_path=str(out / "kept.ndjson"),
            discarded_path=str(out / "discarded.ndjson"),
            report_path=str(out / "filter_report.json"),
        )

    @app.post("/train-toy", response_model=TrainToyResponse)
    def train_toy_run(req: TrainToyRequest) -> TrainToyResponse:
        summary = run_train_toy(req.manifest_path, req.out_dir)
        return TrainToyResponse(summary=summary, out_dir=req.out_dir)

    @app.post("/container/inspect")
    def container_inspect(req: ContainerInspectRequest) -> dict:
        return inspect_container(req.path)

    return app


app = create_app()
