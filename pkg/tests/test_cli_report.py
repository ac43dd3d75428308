import json

import pytest
from click.testing import CliRunner

from detaudit.canonical import canonical_serialize
from detaudit.cli import main
from detaudit.records import serialize_corpus
from detaudit.report import AuditParameters, EmptyMetricSet, build_report
from detaudit.simulate import simulate_embedding_runs
from tests.conftest import generation, make_set, scalar


@pytest.fixture
def runner():
    return CliRunner()


def scalar_lines(n_instances=3, n_runs=3, noisy=False):
    lines = []
    for i in range(n_instances):
        for r in range(n_runs):
            score = 0.1 * i + (0.01 * r if noisy else 0.0)
            lines.append(
                json.dumps(
                    {
                        "run_id": f"r{r}",
                        "instance_id": f"i{i}",
                        "config": {"seed": str(r)},
                        "payload": {"kind": "scalar", "score": score, "label": "hi" if score > 0.15 else "lo"},
                    }
                )
            )
    return lines


def generation_lines(diverge=False):
    lines = []
    for i in range(3):
        for r, tp in enumerate(("1", "4")):
            text = f"narrative {i}"
            if diverge and i == 0 and tp == "4":
                text = "narrative zero prime"
            lines.append(
                json.dumps(
                    {
                        "run_id": f"r{tp}",
                        "instance_id": f"p{i}",
                        "config": {"tp": tp},
                        "payload": {
                            "kind": "generation",
                            "text": text,
                            "entities": [f"ent{i}"],
                            "embedding": [1.0, 0.0] if not (diverge and i == 0 and tp == "4") else [0.8, 0.6],
                            "logits": {"steps": [[["a", 30.0], ["b", 0.0]], [["a", 0.1], ["b", 0.0]]]},
                        },
                    }
                )
            )
    return lines


# --- build_report -----------------------------------------------------------


def test_report_rank_layer_via_records(tmp_jsonl):
    from detaudit.records import ingest
    from tests.conftest import ranking_from_order

    recs = []
    for i in range(2):
        rs = make_set(f"i{i}", [ranking_from_order(["a", "b", "c"]) for _ in range(3)])
        recs.extend(rs.records)
    report = build_report(recs, AuditParameters(ks=[2], fixed_keys=[]))
    agg = report["layers"]["rank"]["aggregate"]
    assert agg["j_at_k"]["2"] == 1.0
    assert agg["rbo"] == 1.0
    assert report["metadata"]["layers_computed"] == ["rank"]


def test_report_empty_metric_set():
    rs = make_set("i0", [scalar(0.5)])
    with pytest.raises(EmptyMetricSet):
        build_report(rs.records, AuditParameters())


def test_report_sequence_and_logit_sections():
    from detaudit.records import ingest_lines

    records = ingest_lines(generation_lines(diverge=True)).records
    report = build_report(records, AuditParameters())
    seq = report["layers"]["sequence"]["aggregate"]
    assert seq["em"] == pytest.approx(2 / 3)
    assert 0.9 < seq["psd"] <= 1.0
    logit = report["layers"]["logit"]["aggregate"]
    assert logit["theta_source"] == "self-calibrated"
    assert any("self-calibrated" in w for w in report["warnings"])


def test_report_is_canonicalizable_and_deterministic():
    from detaudit.records import ingest_lines

    records = ingest_lines(scalar_lines(noisy=True)).records
    a = canonical_serialize(build_report(records, AuditParameters()))
    b = canonical_serialize(build_report(records, AuditParameters()))
    assert a == b


# --- CLI: ingest ------------------------------------------------------------


def test_cli_ingest_ok(runner, tmp_jsonl):
    path = tmp_jsonl(scalar_lines())
    result = runner.invoke(main, ["ingest", str(path)])
    assert result.exit_code == 0
    assert "records: 9" in result.output


def test_cli_ingest_strict_failure_exit_2(runner, tmp_jsonl):
    path = tmp_jsonl(["{broken"])
    result = runner.invoke(main, ["ingest", str(path)])
    assert result.exit_code == 2


def test_cli_ingest_lenient(runner, tmp_jsonl):
    path = tmp_jsonl([scalar_lines()[0], "{broken"])
    result = runner.invoke(main, ["ingest", str(path), "--schema-mode", "lenient"])
    assert result.exit_code == 0
    assert "skipped: 1" in result.output


# --- CLI: audit -------------------------------------------------------------


def test_cli_audit_writes_reports(runner, tmp_jsonl, tmp_path):
    path = tmp_jsonl(scalar_lines(noisy=True))
    out = tmp_path / "out"
    result = runner.invoke(main, ["audit", str(path), "-o", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert "prediction" in report["layers"]
    md = (out / "report.md").read_text()
    assert "DDR" in md
    # md values come from the json report
    ddr_value = report["layers"]["prediction"]["ddr"]
    assert f"{ddr_value:.6g}" in md


def test_cli_audit_single_run_exit_3(runner, tmp_jsonl):
    path = tmp_jsonl(scalar_lines(n_runs=1))
    result = runner.invoke(main, ["audit", str(path)])
    assert result.exit_code == 3


def test_cli_audit_invalid_input_exit_2(runner, tmp_jsonl):
    path = tmp_jsonl(["{nope"])
    result = runner.invoke(main, ["audit", str(path)])
    assert result.exit_code == 2


def test_cli_audit_self_determinism(runner, tmp_jsonl, tmp_path):
    path = tmp_jsonl(generation_lines(diverge=True))
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        result = runner.invoke(main, ["audit", str(path), "-o", str(out)])
        assert result.exit_code == 0, result.output
    assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()


def test_cli_audit_group_by(runner, tmp_jsonl, tmp_path):
    path = tmp_jsonl(generation_lines(diverge=True))
    out = tmp_path / "within"
    result = runner.invoke(main, ["audit", str(path), "--group-by", "tp", "-o", str(out)])
    # grouping by tp leaves single-run sets only
    assert result.exit_code == 3


def test_cli_audit_config_precedence(runner, tmp_jsonl, tmp_path):
    path = tmp_jsonl(generation_lines())
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tau": 0.5, "p": 0.8}))
    out = tmp_path / "out"
    result = runner.invoke(
        main, ["audit", str(path), "--config", str(cfg), "--tau", "0.7", "-o", str(out)]
    )
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    params = report["metadata"]["parameters"]
    sources = report["metadata"]["parameter_sources"]
    assert params["tau"] == 0.7 and sources["tau"] == "flag"
    assert params["p"] == 0.8 and sources["p"] == "config"
    assert sources["ks"] == "default"


def test_cli_audit_gate(runner, tmp_jsonl, tmp_path):
    path = tmp_jsonl(generation_lines(diverge=True))
    out = tmp_path / "out"
    gate = json.dumps({"sequence.em": {"min": 1.0}})
    result = runner.invoke(main, ["audit", str(path), "-o", str(out), "--gate", gate])
    assert result.exit_code == 1
    assert "gate failed" in result.output
    gate_ok = json.dumps({"sequence.em": {"min": 0.5}})
    result = runner.invoke(main, ["audit", str(path), "-o", str(out), "--gate", gate_ok])
    assert result.exit_code == 0


def test_cli_audit_theta_flag_and_calibration(runner, tmp_jsonl, tmp_path):
    path = tmp_jsonl(generation_lines())
    out = tmp_path / "out"
    result = runner.invoke(main, ["audit", str(path), "--theta-eu", "0.3", "-o", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert report["layers"]["logit"]["aggregate"]["theta_source"] == "explicit"
    calib = tmp_path / "calib.jsonl"
    calib.write_text("\n".join(generation_lines()) + "\n")
    result = runner.invoke(
        main, ["audit", str(path), "--calibrate-from", str(calib), "-o", str(out)]
    )
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert report["layers"]["logit"]["aggregate"]["theta_source"] == "calibrated"


def test_cli_audit_out_dir_env(runner, tmp_jsonl, tmp_path, monkeypatch):
    path = tmp_jsonl(scalar_lines(noisy=True))
    env_out = tmp_path / "envout"
    monkeypatch.setenv("DETAUDIT_OUT_DIR", str(env_out))
    result = runner.invoke(main, ["audit", str(path)])
    assert result.exit_code == 0, result.output
    assert (env_out / "report.json").exists()


# --- CLI: simulate ----------------------------------------------------------


def test_cli_simulate_shapley_deterministic(runner, tmp_path):
    args = ["simulate", "shapley", "--m", "4", "--instances", "2", "--reruns", "2",
            "--budgets", "50", "--seed", "3"]
    a = runner.invoke(main, args + ["-o", str(tmp_path / "a.jsonl")])
    b = runner.invoke(main, args + ["-o", str(tmp_path / "b.jsonl")])
    assert a.exit_code == 0 and b.exit_code == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    # 2 instances x (exact + 1 budget) x 2 reruns
    assert len((tmp_path / "a.jsonl").read_text().splitlines()) == 8


def test_cli_simulate_reduction_preset(runner):
    result = runner.invoke(main, ["simulate", "reduction", "--preset", "cancellation", "--shuffles", "50"])
    assert result.exit_code == 0
    summary = json.loads(result.output)
    assert summary["distinct_sums_single"] >= 2


def test_cli_simulate_embedding_roundtrip(runner, tmp_path):
    out = tmp_path / "emb.jsonl"
    result = runner.invoke(
        main,
        ["simulate", "embedding", "--instances", "3", "--dim", "4", "--noise-scale", "0",
         "--runs", "3", "--seed", "1", "-o", str(out)],
    )
    assert result.exit_code == 0
    audit = runner.invoke(main, ["audit", str(out), "-o", str(tmp_path)])
    assert audit.exit_code == 0, audit.output
    report = json.loads((tmp_path / "report.json").read_text())
    agg = report["layers"]["embedding"]["aggregate"]
    assert agg["d_cos"] == 0.0
    assert agg["flip_rate"] == 0.0


# --- CLI: ledger ------------------------------------------------------------


def test_cli_ledger_append_verify_tamper(runner, tmp_path):
    ledger = tmp_path / "ledger.jsonl"
    payload = tmp_path / "report.json"
    payload.write_text(json.dumps({"metric": 1.0}))
    r1 = runner.invoke(main, ["ledger", "append", str(ledger), str(payload), "--timestamp-ms", "1"])
    assert r1.exit_code == 0, r1.output
    r2 = runner.invoke(main, ["ledger", "verify", str(ledger)])
    assert r2.exit_code == 0 and "ok" in r2.output
    # tamper
    text = ledger.read_text().replace('"timestamp_ms":1', '"timestamp_ms":2')
    ledger.write_text(text)
    r3 = runner.invoke(main, ["ledger", "verify", str(ledger)])
    assert r3.exit_code == 1
    assert "broken at index 0" in r3.output


def test_cli_ledger_lock_conflict_exit_4(runner, tmp_path):
    ledger = tmp_path / "ledger.jsonl"
    payload = tmp_path / "p.json"
    payload.write_text("{}")
    runner.invoke(main, ["ledger", "append", str(ledger), str(payload)])
    lock = tmp_path / "ledger.jsonl.lock"
    lock.write_text("held")
    result = runner.invoke(main, ["ledger", "append", str(ledger), str(payload)])
    assert result.exit_code == 4


def test_cli_version(runner):
    result = runner.invoke(main, ["version"])
    assert result.exit_code == 0
    assert "detaudit" in result.output


def test_simulated_corpus_audits_cleanly(runner, tmp_path):
    records = simulate_embedding_runs(4, 6, 0.05, 3, seed=2)
    path = tmp_path / "emb.jsonl"
    path.write_bytes(serialize_corpus(records))
    result = runner.invoke(main, ["audit", str(path), "-o", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output


def test_report_psd_warning_when_embeddings_missing(runner, tmp_jsonl, tmp_path):
    lines = []
    for r in ("a", "b"):
        lines.append(
            json.dumps(
                {
                    "run_id": r,
                    "instance_id": "i0",
                    "config": {},
                    "payload": {"kind": "generation", "text": "t", "entities": []},
                }
            )
        )
    path = tmp_jsonl(lines)
    out = tmp_path / "out"
    result = runner.invoke(main, ["audit", str(path), "-o", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert report["layers"]["sequence"]["aggregate"]["psd"] is None
    assert any("PSD omitted" in w for w in report["warnings"])
