import json

import pytest

from detaudit.records import (
    AttributionRanking,
    IngestError,
    LogitTrace,
    ValidationError,
    group,
    ingest,
    ingest_lines,
    parse_record,
    record_to_dict,
    serialize_corpus,
)

GOOD = [
    '{"run_id":"r1","instance_id":"i1","config":{"seed":"0"},"payload":{"kind":"scalar","score":0.5,"label":"ok"}}',
    '{"run_id":"r2","instance_id":"i1","config":{"seed":"1"},"payload":{"kind":"scalar","score":0.6,"label":"ok"}}',
    '{"run_id":"r1","instance_id":"i2","config":{"seed":"0"},"payload":{"kind":"scalar","score":0.4,"label":"no"}}',
]


def test_ingest_well_formed(tmp_jsonl):
    result = ingest(tmp_jsonl(GOOD))
    assert len(result.records) == 3
    assert result.n_skipped == 0


def test_lenient_skips_and_counts(tmp_jsonl):
    lines = [GOOD[0], '{"run_id":"r2","instance_id":"i1","config":{}}', GOOD[2]]
    result = ingest(tmp_jsonl(lines), schema_mode="lenient")
    assert len(result.records) == 2
    assert result.n_skipped == 1
    assert result.skipped[0][0] == 2  # line number


def test_strict_aborts_with_line_number(tmp_jsonl):
    lines = [GOOD[0], "{not json"]
    with pytest.raises(IngestError) as err:
        ingest(tmp_jsonl(lines))
    assert err.value.line == 2
    assert "line 2" in str(err.value)


def test_duplicate_names_both_lines(tmp_jsonl):
    lines = [GOOD[0], GOOD[2], GOOD[0]]
    with pytest.raises(IngestError) as err:
        ingest(tmp_jsonl(lines))
    msg = str(err.value)
    assert "line 3" in msg and "line 1" in msg


def test_duplicate_lenient_skips(tmp_jsonl):
    lines = [GOOD[0], GOOD[0]]
    result = ingest(tmp_jsonl(lines), schema_mode="lenient")
    assert len(result.records) == 1
    assert result.n_skipped == 1


def test_unknown_payload_kind():
    line = '{"run_id":"r","instance_id":"i","config":{},"payload":{"kind":"mystery"}}'
    with pytest.raises(IngestError, match="unknown payload kind"):
        ingest_lines([line])


def test_unknown_fields_rejected():
    rec = json.loads(GOOD[0])
    rec["extra"] = 1
    with pytest.raises(ValidationError, match="unknown record field"):
        parse_record(rec)


def test_config_key_rules():
    bad_key = '{"run_id":"r","instance_id":"i","config":{"a b":"1"},"payload":{"kind":"trace","actions":[]}}'
    with pytest.raises(IngestError, match="whitespace"):
        ingest_lines([bad_key])
    empty_key = '{"run_id":"r","instance_id":"i","config":{"":"1"},"payload":{"kind":"trace","actions":[]}}'
    with pytest.raises(IngestError):
        ingest_lines([empty_key])


def test_ranking_resorted_on_ingestion():
    r = AttributionRanking(features=[("low", 0.1), ("hi", -5.0), ("mid", 2.0)])
    assert r.feature_ids() == ["hi", "mid", "low"]
    # ties break by ascending feature_id
    tie = AttributionRanking(features=[("b", 1.0), ("a", -1.0)])
    assert tie.feature_ids() == ["a", "b"]


def test_ranking_rejects_duplicate_features():
    with pytest.raises(ValidationError, match="duplicate"):
        AttributionRanking(features=[("a", 1.0), ("a", 2.0)])


def test_embedding_rejects_nan():
    line = '{"run_id":"r","instance_id":"i","config":{},"payload":{"kind":"embedding","values":[1.0,null]}}'
    with pytest.raises(IngestError):
        ingest_lines([line])


def test_logit_trace_k_rules():
    with pytest.raises(ValidationError, match="K >= 2"):
        LogitTrace(steps=[[("a", 1.0)]])
    with pytest.raises(ValidationError, match="expected K"):
        LogitTrace(steps=[[("a", 1.0), ("b", 0.5)], [("a", 1.0), ("b", 0.5), ("c", 0.1)]])
    ok = LogitTrace(steps=[[("b", 0.5), ("a", 1.0)]])
    assert ok.steps[0][0] == ("a", 1.0)  # re-sorted descending
    assert ok.k == 2


def test_round_trip_via_canonical_jsonl(tmp_path):
    result = ingest_lines(GOOD)
    data = serialize_corpus(result.records)
    path = tmp_path / "round.jsonl"
    path.write_bytes(data)
    again = ingest(path)
    assert again.records == result.records
    assert serialize_corpus(again.records) == data


def test_group_partitions_by_instance():
    lines = []
    for inst in ("i1", "i2"):
        for seed in ("0", "1", "2"):
            lines.append(
                json.dumps(
                    {
                        "run_id": f"r{seed}",
                        "instance_id": inst,
                        "config": {"seed": seed},
                        "payload": {"kind": "scalar", "score": 0.1, "label": "x"},
                    }
                )
            )
    records = ingest_lines(lines).records
    sets = group(records, fixed_keys=[])
    assert len(sets) == 2
    assert all(s.n_runs == 3 for s in sets)
    # partition: every record in exactly one set
    ids = [(r.run_id, r.instance_id) for s in sets for r in s.records]
    assert sorted(ids) == sorted((r.run_id, r.instance_id) for r in records)


def test_group_empty_corpus():
    assert group([], fixed_keys=[]) == []


def test_group_by_config_key():
    lines = []
    for tp in ("1", "4"):
        for run in ("a", "b"):
            lines.append(
                json.dumps(
                    {
                        "run_id": f"tp{tp}-{run}",
                        "instance_id": "i1",
                        "config": {"tp": tp},
                        "payload": {"kind": "scalar", "score": 0.1, "label": "x"},
                    }
                )
            )
    records = ingest_lines(lines).records
    sets = group(records, fixed_keys=["tp"])
    assert [s.group_key for s in sets] == ["tp=1", "tp=4"]
    assert all(s.n_runs == 2 for s in sets)
    pooled = group(records, fixed_keys=[])
    assert len(pooled) == 1 and pooled[0].n_runs == 4


def test_group_missing_fixed_key():
    records = ingest_lines(GOOD).records
    with pytest.raises(ValidationError, match="missing config key"):
        group(records, fixed_keys=["tp"])


def test_group_rejects_mixed_payloads():
    lines = [
        GOOD[0],
        '{"run_id":"r9","instance_id":"i1","config":{},"payload":{"kind":"trace","actions":["a"]}}',
    ]
    records = ingest_lines(lines).records
    with pytest.raises(ValidationError, match="mixes payload variants"):
        group(records, fixed_keys=[])


def test_record_to_dict_omits_absent_fields():
    rec = ingest_lines(GOOD).records[0]
    d = record_to_dict(rec)
    assert "created_at" not in d
    assert d["payload"]["kind"] == "scalar"
