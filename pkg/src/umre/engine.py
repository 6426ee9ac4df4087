"""Run orchestration: evaluation sweeps, mining jobs, filter pipelines, toy
training runs. This is the layer the service endpoints call into; every output
file it writes is byte-deterministic for identical inputs and seeds.
"""

from __future__ import annotations

import base64
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from . import __version__
from .container import read_container
from .dataflow import (
    DEFAULT_MIN_CONFIDENCE,
    DEFAULT_RANK_TOP_N,
    DEFAULT_SCORE_THRESHOLD,
    FilterResult,
    domain_balance,
    rank_filter,
    score_filter,
)
from .errors import InputFormatError, MissingInputFile, NoJudgedQueries
from .fileformats import read_qrels, read_synth_records, write_instances, write_synth_records
from .infonce import LossConfig
from .manifest import CATEGORY_GROUPS, TaskSpecModel, load_manifest, resolve_metric
from .metrics import aggregate, evaluate_dataset_detailed
from .mining import MiningConfig, mine
from .search import default_workers, topk
from .toytrain import (
    SyntheticSpec,
    ToyEncoderParams,
    TrainSettings,
    generate_synthetic,
    init_params,
    mix_study,
    two_stage,
)


def _dump_json(payload: Any, path: Path) -> None:
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=2, separators=(",", ": ")) + "\n",
        encoding="utf-8",
    )


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise MissingInputFile(str(path))
    return p


# --- evaluation ------------------------------------------------------------


def _evaluate_one(spec: TaskSpecModel, metric_override: str | None) -> dict[str, Any]:
    metric = resolve_metric(spec, metric_override)
    queries = read_container(_require_file(spec.queries))
    candidates = read_container(_require_file(spec.candidates))
    qrels = read_qrels(_require_file(spec.qrels))
    results = topk(queries, candidates, metric.cutoff)
    detail = evaluate_dataset_detailed(results, qrels, metric)
    entry: dict[str, Any] = {
        "name": spec.name,
        "category": spec.category,
        "metric": str(metric),
        "score": detail.score,
        "queries_evaluated": len(detail.per_query),
        "queries_skipped": detail.skipped_queries,
    }
    if spec.instruction is not None:
        entry["instruction"] = spec.instruction
    return entry


def run_eval(
    manifest_path: str,
    out_dir: str,
    *,
    workers: int | None = None,
    category: str | None = None,
    metric_override: str | None = None,
) -> dict[str, Any]:
    """Evaluate every dataset in a manifest; write report.json and report.txt."""
    manifest, digest = load_manifest(manifest_path)
    datasets = manifest.datasets
    if category is not None:
        datasets = [d for d in datasets if d.category == category]
        if not datasets:
            raise NoJudgedQueries(f"no dataset matches category {category!r}")
    datasets = sorted(datasets, key=lambda d: d.name)
    workers = workers or default_workers()

    if workers > 1 and len(datasets) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(lambda d: _evaluate_one(d, metric_override), datasets))
    else:
        entries = [_evaluate_one(d, metric_override) for d in datasets]

    agg = aggregate({e["name"]: (e["category"], e["score"]) for e in entries})
    report = {
        "engine_version": __version__,
        "manifest_sha256": digest,
        "seed": manifest.seed,
        "datasets": entries,
        "per_category": agg.per_category,
        "micro_average": agg.micro_average,
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(report, out / "report.json")
    (out / "report.txt").write_text(format_report_table(report), encoding="utf-8")
    return report


def format_report_table(report: dict[str, Any]) -> str:
    """Plain-text table grouped Single-Modal / Cross-Modal / Fused-Modal."""
    by_category: dict[str, list[dict[str, Any]]] = {}
    for entry in report["datasets"]:
        by_category.setdefault(entry["category"], []).append(entry)

    width = max([24] + [len(e["name"]) for e in report["datasets"]])
    lines = []
    lines.append(f"{'dataset':<{width}}  {'category':>8}  {'metric':>9}  {'score':>8}")
    lines.append("-" * (width + 31))
    for group, cats in CATEGORY_GROUPS.items():
        members = [e for cat in cats for e in by_category.get(cat, [])]
        if not members:
            continue
        lines.append(f"[{group}]")
        for e in sorted(members, key=lambda x: x["name"]):
            lines.append(
                f"{e['name']:<{width}}  {e['category']:>8}  {e['metric']:>9}  {e['score']:>8.4f}"
            )
        group_mean = sum(e["score"] for e in members) / len(members)
        lines.append(f"{'  mean':<{width}}  {'':>8}  {'':>9}  {group_mean:>8.4f}")
    lines.append("-" * (width + 31))
    for cat, score in report["per_category"].items():
        lines.append(f"{'avg ' + cat:<{width}}  {'':>8}  {'':>9}  {score:>8.4f}")
    n = len(report["datasets"])
    lines.append(f"{f'micro-average ({n})':<{width}}  {'':>8}  {'':>9}  {report['micro_average']:>8.4f}")
    return "\n".join(lines) + "\n"


# --- mining ----------------------------------------------------------------


class MiningJobModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    queries: str
    candidates: str
    qrels: str
    retrieve_k: int = 100
    negatives_out: int = 8
    rank_window: Optional[tuple[int, int]] = None
    selection: str = "rank"
    seed: int = 0


def load_mining_job(path: str) -> MiningJobModel:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingInputFile(str(path)) from None
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"invalid JSON: {exc.msg}", path=str(path), line=exc.lineno) from None
    try:
        return MiningJobModel.model_validate(payload)
    except ValidationError as exc:
        issues = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        )
        raise InputFormatError(issues, path=str(path)) from None


def run_mine(
    job_path: str, out_path: str, *, workers: int | None = None, seed: int | None = None
) -> dict[str, Any]:
    job = load_mining_job(job_path)
    queries = read_container(_require_file(job.queries))
    candidates = read_container(_require_file(job.candidates))
    qrels = read_qrels(_require_file(job.qrels))
    cfg = MiningConfig(
        retrieve_k=job.retrieve_k,
        negatives_out=job.negatives_out,
        rank_window=job.rank_window,
        selection=job.selection,
        seed=job.seed if seed is None else seed,
    )
    instances = mine(queries, candidates, qrels, cfg, workers=workers or default_workers())
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_instances(instances, out)
    return {
        "instances_path": str(out),
        "instance_count": len(instances),
        "flagged_count": sum(1 for i in instances if i.insufficient_window),
    }


# --- filtering -------------------------------------------------------------


def _write_discards(discards: list, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (rec, reason), stage in discards:
            payload = {
                "record_id": rec.record_id,
                "stage": stage,
                "reason": reason,
            }
            fh.write(json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")


def run_filter(
    records_path: str,
    out_dir: str,
    *,
    queries_path: str | None = None,
    passages_path: str | None = None,
    top_n: int = DEFAULT_RANK_TOP_N,
    threshold: float = DEFAULT_SCORE_THRESHOLD,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
    domain_quota: int | None = None,
    seed: int = 0,
) -> dict[str, Any]:
    """Run the synthesis-quality pipeline: rank filter (when embeddings are
    given), score filter, then optional domain balancing.

    The stage report carries both stage-relative and absolute discard
    fractions.
    """
    records = read_synth_records(_require_file(records_path))
    total = len(records)
    current = records
    stages: list[dict[str, Any]] = []
    all_discards: list = []

    def note(stage: str, result: FilterResult):
        nonlocal current
        stages.append(
            {
                "stage": stage,
                "input": len(result.kept) + len(result.discarded),
                "kept": len(result.kept),
                "discarded": len(result.discarded),
                "stage_discard_fraction": result.discard_fraction,
                "absolute_discard_fraction": len(result.discarded) / total if total else 0.0,
                "flags": result.flags,
            }
        )
        all_discards.extend(((rec, reason), stage) for rec, reason in result.discarded)
        current = result.kept

    if queries_path is not None or passages_path is not None:
        if queries_path is None or passages_path is None:
            raise InputFormatError("rank filtering needs both query and passage embeddings")
        queries = read_container(_require_file(queries_path))
        passages = read_container(_require_file(passages_path))
        qmap = {rec.record_id: (rec.record_id, rec.passage_id) for rec in current}
        note("rank", rank_filter(current, queries, passages, qmap, top_n=top_n))

    note("score", score_filter(current, threshold=threshold))

    if domain_quota is not None:
        note("domain", domain_balance(current, domain_quota, min_confidence=min_confidence, seed=seed))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_synth_records(current, out / "kept.ndjson")
    _write_discards(all_discards, out / "discarded.ndjson")
    report = {
        "input_records": total,
        "kept_records": len(current),
        "overall_discard_fraction": (total - len(current)) / total if total else 0.0,
        "stages": stages,
    }
    _dump_json(report, out / "filter_report.json")
    return report


# --- toy training ----------------------------------------------------------


class EncoderModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    feature_dim: int = 256
    embed_dim: int = 16
    pooling: str = "mean"
    instruction_mode: str = "query_only"
    hash_seed: int = 0


class LossModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    temperature: float = 0.03
    negatives_per_query: int = 8


class TrainingModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    steps: int = 400
    batch_size: int = 16
    learning_rate: float = 4.0
    seed: int = 7


class SyntheticModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    clusters: int = 32
    items_per_cluster: int = 5
    tokens_per_item: int = 12
    cluster_vocab: int = 8
    noise_rate: float = 0.05
    eval_fraction: float = 0.4
    seed: int = 7


class MiningModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    retrieve_k: int = 100
    negatives_out: int = 8
    rank_window: Optional[tuple[int, int]] = None
    selection: str = "rank"
    seed: int = 0


class ToyRunModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: str
    synthetic: SyntheticModel = SyntheticModel()
    encoder: EncoderModel = EncoderModel()
    loss: LossModel = LossModel()
    training: TrainingModel = TrainingModel()
    stage2: Optional[TrainingModel] = None
    mining: Optional[MiningModel] = None
    sources: Optional[list[str]] = None
    eval_cutoff: int = 5
    use_hard_negatives: bool = True


def load_toy_manifest(path: str) -> ToyRunModel:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise MissingInputFile(str(path)) from None
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"invalid JSON: {exc.msg}", path=str(path), line=exc.lineno) from None
    try:
        model = ToyRunModel.model_validate(payload)
    except ValidationError as exc:
        issues = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        )
        raise InputFormatError(issues, path=str(path)) from None
    if model.mode not in ("two_stage", "mix_study"):
        raise InputFormatError(f"mode must be two_stage or mix_study, got {model.mode!r}", path=str(path))
    return model


def params_to_checkpoint(params: ToyEncoderParams) -> dict[str, Any]:
    return {
        "feature_dim": params.feature_dim,
        "embed_dim": params.embed_dim,
        "pooling": params.pooling,
        "instruction_mode": params.instruction_mode,
        "hash_seed": params.hash_seed,
        "projection_b64": base64.b64encode(
            np.ascontiguousarray(params.projection, dtype="<f8").tobytes()
        ).decode("ascii"),
    }


def checkpoint_to_params(payload: dict[str, Any]) -> ToyEncoderParams:
    raw = base64.b64decode(payload["projection_b64"])
    projection = np.frombuffer(raw, dtype="<f8").reshape(
        payload["feature_dim"], payload["embed_dim"]
    )
    return ToyEncoderParams(
        projection=projection.copy(),
        pooling=payload["pooling"],
        instruction_mode=payload["instruction_mode"],
        hash_seed=payload["hash_seed"],
    )


def run_train_toy(manifest_path: str, out_dir: str) -> dict[str, Any]:
    model = load_toy_manifest(manifest_path)
    spec = SyntheticSpec(**model.synthetic.model_dump())
    corpus = generate_synthetic(spec)
    sources = model.sources or sorted(corpus.tasks)
    loss_cfg = LossConfig(**model.loss.model_dump())
    settings = TrainSettings(**model.training.model_dump())
    enc = model.encoder
    params0 = init_params(
        enc.feature_dim,
        enc.embed_dim,
        pooling=enc.pooling,
        instruction_mode=enc.instruction_mode,
        hash_seed=enc.hash_seed,
        seed=settings.seed,
    )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary: dict[str, Any] = {"mode": model.mode, "sources": sources}

    if model.mode == "two_stage":
        stage2 = TrainSettings(**(model.stage2 or model.training).model_dump())
        mining_cfg = (
            MiningConfig(**model.mining.model_dump()) if model.mining is not None else None
        )
        result = two_stage(
            corpus,
            sources,
            settings,
            stage2,
            loss_cfg,
            mining_cfg=mining_cfg,
            use_hard_negatives=model.use_hard_negatives,
            eval_cutoff=model.eval_cutoff,
            params=params0,
        )
        _dump_json(params_to_checkpoint(result.stage1.params), out / "checkpoint_stage1.json")
        _dump_json(params_to_checkpoint(result.stage2.params), out / "checkpoint_stage2.json")
        _dump_json(
            {
                "stage1": result.stage1.loss_trace,
                "stage2": result.stage2.loss_trace,
            },
            out / "loss_trace.json",
        )
        summary["eval_table"] = result.eval_table
        summary["mined_instances"] = {tag: len(v) for tag, v in result.mined.items()}
        table_lines = [f"{'stage':<12}" + "".join(f"{t:>10}" for t in sources) + f"{'mean':>10}"]
        for stage_name, scores in result.eval_table.items():
            mean = sum(scores.values()) / len(scores)
            table_lines.append(
                f"{stage_name:<12}"
                + "".join(f"{scores[t]:>10.4f}" for t in sources)
                + f"{mean:>10.4f}"
            )
        (out / "eval_grid.txt").write_text("\n".join(table_lines) + "\n", encoding="utf-8")
    else:
        result = mix_study(corpus, settings, loss_cfg, eval_cutoff=model.eval_cutoff)
        summary["per_task"] = result.per_task
        summary["per_category"] = result.per_category
        summary["macro_mean"] = result.macro_mean
        cats = sorted(next(iter(result.per_category.values())))
        table_lines = [f"{'model':<12}" + "".join(f"{c:>16}" for c in cats) + f"{'macro':>10}"]
        for m in result.models:
            table_lines.append(
                f"{m:<12}"
                + "".join(f"{result.per_category[m][c]:>16.4f}" for c in cats)
                + f"{result.macro_mean[m]:>10.4f}"
            )
        (out / "eval_grid.txt").write_text("\n".join(table_lines) + "\n", encoding="utf-8")

    summary["config"] = {
        "synthetic": model.synthetic.model_dump(),
        "encoder": model.encoder.model_dump(),
        "loss": model.loss.model_dump(),
        "training": model.training.model_dump(),
        "eval_cutoff": model.eval_cutoff,
        "use_hard_negatives": model.use_hard_negatives,
    }
    _dump_json(summary, out / "run_report.json")
    return summary
