"""Thin CLI client for the service.

Every command goes through the HTTP API. Without ``--server`` the app is
mounted in-process (no network, same request/response models); with
``--server URL`` the same requests go to a running instance. Exit codes:
0 success, 2 malformed manifests/schemas/input files, 3 missing files,
1 anything else.
"""

from __future__ import annotations

import json
import sys

import click

from . import __version__

_FORMAT_KINDS = {
    "input-format",
    "container-format",
    "bad-magic",
    "version-unsupported",
    "truncated-file",
    "dtype-unsupported",
    "normalization-invalid",
    "invalid-config",
    "invalid-spec",
}

EXIT_FORMAT_ERROR = 2
EXIT_MISSING_FILE = 3


def _client(server: str | None):
    import httpx

    if server:
        return httpx.Client(base_url=server, timeout=3600.0)
    import warnings

    with warnings.catch_warnings():
        # The in-process transport reuses the ASGI test client, whose import
        # warns on some starlette builds; the warning is not actionable here.
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app, raise_server_exceptions=False)


def _post(server: str | None, path: str, payload: dict) -> dict:
    with _client(server) as client:
        response = client.post(path, json=payload)
    if response.status_code >= 400:
        try:
            error = response.json().get("error", {})
        except Exception:
            error = {}
        kind = error.get("kind", "http")
        message = error.get("message", response.text)
        click.echo(f"error ({kind}): {message}", err=True)
        if kind in _FORMAT_KINDS:
            sys.exit(EXIT_FORMAT_ERROR)
        if kind == "missing-file":
            sys.exit(EXIT_MISSING_FILE)
        sys.exit(1)
    return response.json()


server_option = click.option("--server", default=None, help="Service URL; default runs in-process.")
workers_option = click.option("--workers", type=int, default=None, help="Worker threads (default: UMRE_WORKERS or 1).")


@click.group()
@click.version_option(__version__)
def main():
    """Dense-retrieval evaluation and training engine."""


@main.command("eval")
@click.option("--manifest", required=True, help="Task manifest JSON path.")
@click.option("--out", required=True, help="Output directory for report files.")
@click.option("--category", default=None, help="Only evaluate datasets with this category tag.")
@click.option("--metric-override", default=None, help="Force one metric, e.g. ndcg@10.")
@workers_option
@server_option
def eval_cmd(manifest, out, category, metric_override, workers, server):
    """Evaluate a benchmark manifest and write report files."""
    body = _post(
        server,
        "/eval",
        {
            "manifest_path": manifest,
            "out_dir": out,
            "workers": workers,
            "category": category,
            "metric_override": metric_override,
        },
    )
    from .engine import format_report_table

    click.echo(format_report_table(body["report"]), nl=False)
    click.echo(f"report: {body['report_path']}")


@main.command("mine")
@click.option("--manifest", required=True, help="Mining job JSON path.")
@click.option("--out", required=True, help="Output training-instance file.")
@click.option("--seed", type=int, default=None, help="Override the job's seed.")
@workers_option
@server_option
def mine_cmd(manifest, out, seed, workers, server):
    """Mine hard negatives into a training-instance file."""
    body = _post(
        server,
        "/mine",
        {"job_path": manifest, "out_path": out, "workers": workers, "seed": seed},
    )
    click.echo(
        f"mined {body['instance_count']} instances "
        f"({body['flagged_count']} flagged) -> {body['instances_path']}"
    )


@main.command("filter")
@click.argument("records")
@click.option("--out", required=True, help="Output directory.")
@click.option("--queries", default=None, help="Query embedding container (enables the rank filter).")
@click.option("--passages", default=None, help="Passage embedding container (enables the rank filter).")
@click.option("--top-n", type=int, default=20, show_default=True, help="Rank-filter cutoff.")
@click.option("--threshold", type=float, default=0.2, show_default=True, help="Relevance-score cutoff.")
@click.option("--min-confidence", type=float, default=0.5, show_default=True, help="Domain confidence floor.")
@click.option("--domain-quota", type=int, default=None, help="Per-domain quota (enables domain balancing).")
@click.option("--seed", type=int, default=0, show_default=True)
@server_option
def filter_cmd(records, out, queries, passages, top_n, threshold, min_confidence, domain_quota, seed, server):
    """Run the synthesis-quality filters over an NDJSON record file."""
    body = _post(
        server,
        "/filter",
        {
            "records_path": records,
            "out_dir": out,
            "queries_path": queries,
            "passages_path": passages,
            "top_n": top_n,
            "threshold": threshold,
            "min_confidence": min_confidence,
            "domain_quota": domain_quota,
            "seed": seed,
        },
    )
    report = body["report"]
    for stage in report["stages"]:
        click.echo(
            f"stage {stage['stage']}: kept {stage['kept']}/{stage['input']} "
            f"(stage discard {stage['stage_discard_fraction']:.4f}, "
            f"absolute {stage['absolute_discard_fraction']:.4f})"
        )
    click.echo(
        f"kept {report['kept_records']}/{report['input_records']} records "
        f"(overall discard {report['overall_discard_fraction']:.4f})"
    )
    click.echo(f"report: {body['report_path']}")


@main.command("train-toy")
@click.option("--manifest", required=True, help="Toy training run manifest JSON.")
@click.option("--out", required=True, help="Output directory for checkpoints and grids.")
@server_option
def train_toy_cmd(manifest, out, server):
    """Run the desk-scale training recipe from a run manifest."""
    body = _post(server, "/train-toy", {"manifest_path": manifest, "out_dir": out})
    summary = body["summary"]
    click.echo(f"mode: {summary['mode']}")
    if "eval_table" in summary:
        for stage, scores in summary["eval_table"].items():
            mean = sum(scores.values()) / len(scores)
            click.echo(f"  {stage}: mean recall {mean:.4f}")
    if "macro_mean" in summary:
        for model, score in summary["macro_mean"].items():
            click.echo(f"  {model}: macro mean {score:.4f}")
    click.echo(f"outputs: {body['out_dir']}")


@main.command("container-inspect")
@click.argument("path")
@server_option
def container_inspect_cmd(path, server):
    """Print an embedding container's header."""
    body = _post(server, "/container/inspect", {"path": path})
    click.echo(json.dumps(body, indent=2, sort_keys=True))


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8321, show_default=True)
def serve_cmd(host, port):
    """Run the engine as a long-lived HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
