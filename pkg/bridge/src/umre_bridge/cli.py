"""Command-line exporter.

The built-in deterministic hash embedder covers wiring checks and format
tests; real models plug in through the library API (`export(job, embed_fn)`)
since model loading is out of scope for a format bridge.
"""

from __future__ import annotations

import argparse
import sys

from .errors import BridgeError
from .export import ExportJob, export, export_qrels
from .stub import HashEmbedder


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="umre-bridge")
    sub = parser.add_subparsers(dest="command", required=True)

    exp = sub.add_parser("export", help="Embed a dataset side into a container file.")
    exp.add_argument("--dataset", required=True, help="NDJSON dataset with id/text records.")
    exp.add_argument("--out", required=True, help="Output container path.")
    exp.add_argument("--side", choices=("query", "candidate"), required=True)
    exp.add_argument("--instruction", default=None, help="Explicit instruction template.")
    exp.add_argument("--task", default=None, help="Task tag for the default template, e.g. T->I.")
    exp.add_argument("--dataset-name", default=None, help="Dataset name for template lookup.")
    exp.add_argument("--batch-size", type=int, default=32)
    exp.add_argument("--stub-dim", type=int, default=32, help="Hash-embedder dimension.")
    exp.add_argument("--stub-seed", type=int, default=0)

    qr = sub.add_parser("export-qrels", help="Write TREC qrels from records with 'relevant' maps.")
    qr.add_argument("--dataset", required=True)
    qr.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "export":
            job = ExportJob(
                dataset_path=args.dataset,
                output_path=args.out,
                side=args.side,
                instruction=args.instruction,
                task=args.task,
                dataset_name=args.dataset_name,
                batch_size=args.batch_size,
            )
            summary = export(job, HashEmbedder(dim=args.stub_dim, seed=args.stub_seed))
            resumed = f" (resumed from item {summary['resumed_from']})" if summary["resumed_from"] else ""
            print(
                f"exported {summary['count']} x dim {summary['dim']} "
                f"{summary['side']} vectors -> {summary['path']}{resumed}"
            )
        else:
            written = export_qrels(args.dataset, args.out)
            print(f"wrote {written} judgment lines -> {args.out}")
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
