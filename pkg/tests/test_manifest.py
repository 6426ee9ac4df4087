from __future__ import annotations

import json

import pytest

from umre.errors import InputFormatError, MissingInputFile
from umre.manifest import (
    CATEGORIES,
    CATEGORY_GROUPS,
    TaskSpecModel,
    default_metric,
    load_manifest,
    resolve_metric,
)
from umre.metrics import MetricKind


def write_manifest(tmp_path, payload, name="manifest.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def entry(name="d1", category="T->T", **extra):
    base = {
        "name": name,
        "category": category,
        "queries": "q.umre",
        "candidates": "c.umre",
        "qrels": "r.txt",
    }
    base.update(extra)
    return base


class TestRouting:
    def test_text_tasks_get_ndcg10(self):
        spec = default_metric("T->T")
        assert spec.kind is MetricKind.NDCG and spec.cutoff == 10

    def test_visual_documents_get_ndcg5(self):
        spec = default_metric("T->VD")
        assert spec.kind is MetricKind.NDCG and spec.cutoff == 5

    def test_recall10_flag_wins(self):
        spec = default_metric("IT->I", recall10=True)
        assert spec.kind is MetricKind.RECALL and spec.cutoff == 10

    @pytest.mark.parametrize(
        "category", ["I->I", "T->I", "I->T", "T->IT", "IT->T", "IT->I", "IT->IT"]
    )
    def test_everything_else_gets_recall5(self, category):
        spec = default_metric(category)
        assert spec.kind is MetricKind.RECALL and spec.cutoff == 5

    def test_dataset_override_beats_routing(self):
        model = TaskSpecModel(**entry(category="T->T", metric="recall@5"))
        assert str(resolve_metric(model)) == "recall@5"

    def test_global_override_beats_dataset(self):
        model = TaskSpecModel(**entry(category="T->T", metric="recall@5"))
        assert str(resolve_metric(model, "ndcg@10")) == "ndcg@10"

    def test_nine_categories_grouped(self):
        grouped = [c for cats in CATEGORY_GROUPS.values() for c in cats]
        assert sorted(grouped) == sorted(CATEGORIES)
        assert len(CATEGORIES) == 9


class TestLoadManifest:
    def test_valid_manifest(self, tmp_path):
        path = write_manifest(tmp_path, {"datasets": [entry()], "seed": 3})
        manifest, digest = load_manifest(path)
        assert manifest.datasets[0].name == "d1"
        assert manifest.seed == 3
        assert len(digest) == 64

    def test_unknown_top_level_key(self, tmp_path):
        path = write_manifest(tmp_path, {"datasets": [entry()], "comment": "hi"})
        with pytest.raises(InputFormatError) as err:
            load_manifest(path)
        assert "comment" in str(err.value)

    def test_unknown_dataset_key(self, tmp_path):
        path = write_manifest(tmp_path, {"datasets": [entry(metrix="ndcg@10")]})
        with pytest.raises(InputFormatError) as err:
            load_manifest(path)
        assert "metrix" in str(err.value)

    def test_bad_category(self, tmp_path):
        path = write_manifest(tmp_path, {"datasets": [entry(category="T=>T")]})
        with pytest.raises(InputFormatError):
            load_manifest(path)

    def test_bad_metric_string(self, tmp_path):
        path = write_manifest(tmp_path, {"datasets": [entry(metric="map@3")]})
        with pytest.raises(InputFormatError):
            load_manifest(path)

    def test_duplicate_names(self, tmp_path):
        path = write_manifest(tmp_path, {"datasets": [entry(), entry()]})
        with pytest.raises(InputFormatError):
            load_manifest(path)

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"datasets": [\n  {broken\n]}')
        with pytest.raises(InputFormatError) as err:
            load_manifest(path)
        assert ":2:" in str(err.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputFile):
            load_manifest(tmp_path / "none.json")

    def test_empty_datasets(self, tmp_path):
        path = write_manifest(tmp_path, {"datasets": []})
        with pytest.raises(InputFormatError):
            load_manifest(path)
