from __future__ import annotations

import json

from umre_bridge.cli import main

from umre.container import inspect_container
from umre.fileformats import read_qrels


def write_dataset(tmp_path, n=5, with_relevance=False):
    path = tmp_path / "data.ndjson"
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n):
            record = {"id": f"i{i}", "text": f"text {i}"}
            if with_relevance:
                record["relevant"] = {f"c{i}": 1}
            fh.write(json.dumps(record) + "\n")
    return path


class TestCli:
    def test_export_command(self, tmp_path, capsys):
        dataset = write_dataset(tmp_path)
        out = tmp_path / "out.umre"
        code = main(
            [
                "export",
                "--dataset",
                str(dataset),
                "--out",
                str(out),
                "--side",
                "query",
                "--task",
                "T->VD",
                "--stub-dim",
                "16",
            ]
        )
        assert code == 0
        assert "exported 5 x dim 16 query vectors" in capsys.readouterr().out
        info = inspect_container(out)
        assert info["count"] == 5 and info["normalized"] and info["string_ids"]

    def test_export_qrels_command(self, tmp_path, capsys):
        dataset = write_dataset(tmp_path, with_relevance=True)
        out = tmp_path / "qrels.txt"
        code = main(["export-qrels", "--dataset", str(dataset), "--out", str(out)])
        assert code == 0
        assert read_qrels(out)["i0"] == {"c0": 1}

    def test_bad_dataset_exits_2(self, tmp_path, capsys):
        code = main(
            [
                "export",
                "--dataset",
                str(tmp_path / "missing.ndjson"),
                "--out",
                str(tmp_path / "o.umre"),
                "--side",
                "candidate",
            ]
        )
        assert code == 2
        assert "error" in capsys.readouterr().err
