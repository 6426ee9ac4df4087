from __future__ import annotations

import pytest

from umre.dataflow import SynthRecord
from umre.errors import InputFormatError, MissingInputFile
from umre.fileformats import (
    read_instances,
    read_qrels,
    read_synth_records,
    write_instances,
    write_qrels,
    write_synth_records,
)
from umre.mining import MinedInstance


class TestQrels:
    def test_roundtrip(self, tmp_path):
        qrels = {"q1": {"d1": 2, "d2": 0}, "q2": {"d1": 1}}
        path = tmp_path / "qrels.txt"
        write_qrels(qrels, path)
        assert read_qrels(path) == qrels

    def test_comments_and_blanks(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("# judged pool v1\n\nq1 0 d1 1\n  # trailing comment line\nq1 0 d2 0\n")
        assert read_qrels(path) == {"q1": {"d1": 1, "d2": 0}}

    def test_iteration_column_ignored(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 Q0 d1 3\n")
        assert read_qrels(path) == {"q1": {"d1": 3}}

    def test_wrong_field_count_reports_line(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 0 d1 1\nq2 d2 1\n")
        with pytest.raises(InputFormatError) as err:
            read_qrels(path)
        assert ":2:" in str(err.value)

    def test_negative_relevance_rejected(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 0 d1 -1\n")
        with pytest.raises(InputFormatError):
            read_qrels(path)

    def test_duplicate_pair_rejected(self, tmp_path):
        path = tmp_path / "qrels.txt"
        path.write_text("q1 0 d1 1\nq1 0 d1 2\n")
        with pytest.raises(InputFormatError) as err:
            read_qrels(path)
        assert "duplicate" in str(err.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputFile):
            read_qrels(tmp_path / "gone.txt")


class TestInstances:
    def test_roundtrip(self, tmp_path):
        instances = [
            MinedInstance("q1", "p1", ["n1", "n2"]),
            MinedInstance("q2", "p9", ["n3"], insufficient_window=True),
        ]
        path = tmp_path / "instances.ndjson"
        write_instances(instances, path)
        assert read_instances(path) == instances

    def test_deterministic_bytes(self, tmp_path):
        instances = [MinedInstance("q", "p", ["a", "b", "c"])]
        p1, p2 = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
        write_instances(instances, p1)
        write_instances(instances, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_negatives_rejected(self, tmp_path):
        path = tmp_path / "bad.ndjson"
        path.write_text('{"query_id": "q", "positive_id": "p", "negative_ids": []}\n')
        with pytest.raises(InputFormatError):
            read_instances(path)

    def test_positive_among_negatives_rejected(self, tmp_path):
        path = tmp_path / "bad.ndjson"
        path.write_text('{"query_id": "q", "positive_id": "p", "negative_ids": ["p", "x"]}\n')
        with pytest.raises(InputFormatError):
            read_instances(path)

    def test_unknown_key_rejected_with_line(self, tmp_path):
        path = tmp_path / "bad.ndjson"
        path.write_text(
            '{"query_id": "q", "positive_id": "p", "negative_ids": ["x"]}\n'
            '{"query_id": "q2", "positive_id": "p", "negative_ids": ["x"], "oops": 1}\n'
        )
        with pytest.raises(InputFormatError) as err:
            read_instances(path)
        assert ":2:" in str(err.value)

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.ndjson"
        path.write_text('{"query_id": "q", "positive_id": "p", "negative_ids": ["x"]}\n{broken\n')
        with pytest.raises(InputFormatError) as err:
            read_instances(path)
        assert ":2:" in str(err.value)


class TestSynthRecords:
    def test_roundtrip(self, tmp_path):
        records = [
            SynthRecord(
                record_id="r1",
                query_text="where is it",
                rewritten_query_text="where is this place",
                entity="somewhere",
                passage_id="p77",
                image_source="retrieved",
                image_caption="a place",
                relevance_score=0.31,
                domain_label="geography",
                domain_confidence=0.8,
            ),
            SynthRecord(record_id="r2", image_source="generated"),
        ]
        path = tmp_path / "records.ndjson"
        write_synth_records(records, path)
        assert read_synth_records(path) == records

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "bad.ndjson"
        path.write_text('{"record_id": "r", "clip_score": 0.5}\n')
        with pytest.raises(InputFormatError):
            read_synth_records(path)

    def test_bad_image_source_reports_line(self, tmp_path):
        path = tmp_path / "bad.ndjson"
        path.write_text('{"record_id": "r", "image_source": "drawn"}\n')
        with pytest.raises(InputFormatError) as err:
            read_synth_records(path)
        assert ":1:" in str(err.value)
