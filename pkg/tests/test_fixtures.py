import json

from detaudit.fixtures import CALIBRATION, CROSS_TP, EXPECTED, WITHIN_TP, fixture_path
from detaudit.records import ingest
from detaudit.report import AuditParameters, build_report


def load_expected():
    return json.loads(fixture_path(EXPECTED).read_text())


def calibration_traces():
    return [r.payload.logits for r in ingest(fixture_path(CALIBRATION)).records]


def recompute(name, fixed_keys):
    records = ingest(fixture_path(name)).records
    params = AuditParameters(fixed_keys=fixed_keys, calibration_traces=calibration_traces())
    return build_report(records, params)


def test_fixtures_pass_strict_ingest():
    for name in (CROSS_TP, WITHIN_TP, CALIBRATION):
        result = ingest(fixture_path(name))
        assert result.n_skipped == 0
        assert len(result.records) > 0


def test_cross_tp_recomputes_to_frozen_values():
    expected = load_expected()["cross"]
    report = recompute(CROSS_TP, fixed_keys=[])
    seq = report["layers"]["sequence"]["aggregate"]
    logit = report["layers"]["logit"]["aggregate"]
    assert seq["em"] == expected["em"]
    assert seq["entity_jaccard"] == expected["entity_jaccard"]
    assert seq["match_score"] == expected["match_score"]
    assert seq["psd"] == expected["psd"]
    assert logit["theta_eu"] == expected["theta_eu"]
    assert logit["tdi"] == expected["tdi"]
    lo, hi = expected["tdi_band"]
    assert lo <= logit["tdi"] <= hi


def test_cross_tp_matches_design_targets():
    expected = load_expected()
    report = recompute(CROSS_TP, fixed_keys=[])
    seq = report["layers"]["sequence"]["aggregate"]
    # 17 of 20 prompt pairs byte-identical
    assert seq["em"] == expected["design"]["em_cross_target"] == 0.85
    assert abs(seq["entity_jaccard"] - 0.97) < 1e-9
    assert round(seq["psd"], 2) == 0.99


def test_within_tp_is_fully_deterministic():
    expected = load_expected()["within"]
    report = recompute(WITHIN_TP, fixed_keys=["tp"])
    seq = report["layers"]["sequence"]["aggregate"]
    logit = report["layers"]["logit"]["aggregate"]
    assert seq["em"] == expected["em"] == 1.0
    assert seq["entity_jaccard"] == 1.0
    assert seq["psd"] == 1.0
    assert logit["tdi"] == expected["tdi"] == 1.0


def test_calibrated_threshold_sits_above_the_within_bulk():
    from detaudit.logit import calibrate_theta, _trace_eu

    theta = calibrate_theta(calibration_traces(), quantile=0.99)
    assert theta == load_expected()["cross"]["theta_eu"]
    within_traces = [
        r.payload.logits for r in ingest(fixture_path(WITHIN_TP)).records
    ]
    pooled = [eu for t in within_traces for eu in _trace_eu(t)]
    assert max(pooled) < theta  # 100% of within-config tokens pass strictly
