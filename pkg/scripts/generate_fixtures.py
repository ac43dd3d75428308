#!/usr/bin/env python3
"""Regenerate the bundled sample corpora and their frozen expected values.

Deterministic: every value derives from fixed seeds through the package's
own PCG64 streams, so reruns are byte-identical. The frozen metrics in
expected.json come from running the shipped pipeline over the freshly
written corpora; EM and entity Jaccard additionally have hand-derived
targets (17/20 identical pairs, 3 divergent pairs at Jaccard 4/5).
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from detaudit.canonical import canonical_serialize
from detaudit.records import (
    GenerationOutput,
    LogitTrace,
    RunRecord,
    ingest,
    serialize_corpus,
)
from detaudit.report import AuditParameters, build_report

OUT_DIR = Path(__file__).resolve().parents[1] / "src" / "detaudit" / "fixtures" / "data"

SEED = 20240901
N_PROMPTS = 20
DIVERGENT = {3, 11, 17}  # prompts whose tp=4 run drifts
DIM = 16
K = 5
T_CROSS = 10
T_CALIB = 20

FIRST = ["Alpha Corp", "Beta LLC", "Gamma Holdings", "Delta Partners", "Epsilon Trading",
         "Zeta Imports", "Eta Capital", "Theta Ventures", "Iota Group", "Kappa Services"]
SECOND = ["Omega Bank", "Sigma Trust", "Lambda Finance", "Mu Exchange", "Nu Brokerage"]


def rng(*stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(SEED, spawn_key=stream)))


def unit_vector(g: np.random.Generator, dim: int) -> np.ndarray:
    v = g.normal(size=dim)
    return v / math.sqrt(float(np.dot(v, v)))


def rotated(base: np.ndarray, cos_target: float, g: np.random.Generator) -> list[float]:
    """Unit vector at the requested cosine from base."""
    w = g.normal(size=base.size)
    w = w - float(np.dot(w, base)) * base
    w = w / math.sqrt(float(np.dot(w, w)))
    v = cos_target * base + math.sqrt(1.0 - cos_target**2) * w
    return [float(c) for c in v]


def narrative(i: int) -> tuple[str, list[str]]:
    g = rng(1, i)
    sender = FIRST[i % len(FIRST)]
    receiver = SECOND[int(g.integers(len(SECOND)))]
    amount = f"${int(g.integers(5, 995)) * 100:,}"
    date = f"2024-{int(g.integers(1, 13)):02d}-{int(g.integers(1, 29)):02d}"
    account = f"acct {int(g.integers(10_000, 99_999))}"
    text = (
        f"{sender} wired {amount} to {receiver} on {date} via {account}; "
        f"the transfer pattern matches prior structuring activity."
    )
    return text, [sender, receiver, amount, date]


def drifted(text: str, entities: list[str], i: int) -> tuple[str, list[str]]:
    """Semantically close variant with one extra extracted unit."""
    alt = text.replace("wired", "transferred").replace("structuring", "layering")
    extra = f"ref {7000 + i}"
    return alt + f" Reference {7000 + i} was attached.", entities + [extra]


def steps_for_eu(targets: list[float], words: list[str], g: np.random.Generator) -> LogitTrace:
    """K=5 logit steps whose shifted-alpha EU equals each target.

    With the floor logit at 0, EU = K / (sum of elevations + 2K), so an
    elevation budget of K/eu - 2K hits the target exactly; the fixed split
    shapes a plausible descending top-K curve.
    """
    steps = []
    split = np.array([0.58, 0.25, 0.12, 0.05])  # elevation shares above the floor
    for t, eu in enumerate(targets):
        budget = 5.0 / eu - 10.0
        elev = split * budget
        token = words[t % len(words)]
        alts = [f"{token}~{j}" for j in range(1, 5)]
        logits = [float(e) for e in elev] + [0.0]
        steps.append([(tok, lo) for tok, lo in zip([token] + alts, logits)])
    return LogitTrace(steps=steps)


def strong_targets(g: np.random.Generator, count: int) -> list[float]:
    return [float(v) for v in g.uniform(0.08, 0.12, size=count)]


def weak_targets(g: np.random.Generator, count: int) -> list[float]:
    return [float(v) for v in g.uniform(0.35, 0.48, size=count)]


def gen_record(run_id, instance_id, tp, text, entities, emb, trace) -> RunRecord:
    return RunRecord(
        run_id=run_id,
        instance_id=instance_id,
        config={"model": "sar-extractor-7b", "tp": tp, "decoding": "greedy"},
        payload=GenerationOutput(text=text, entities=entities, embedding=emb, logits=trace),
    )


def build_cross() -> list[RunRecord]:
    records = []
    for i in range(N_PROMPTS):
        inst = f"p{i:02d}"
        text, entities = narrative(i)
        base = unit_vector(rng(2, i), DIM)
        emb1 = [float(c) for c in base]
        g_eu = rng(3, i)
        words = text.split()
        # cross-config traces carry weak-evidence tokens at fixed positions:
        # 2 of 10, so every trace recomputes to TDI = 0.8
        targets1 = strong_targets(g_eu, T_CROSS)
        targets2 = strong_targets(g_eu, T_CROSS)
        for targets in (targets1, targets2):
            targets[4] = weak_targets(g_eu, 1)[0]
            targets[9] = weak_targets(g_eu, 1)[0]
        trace1 = steps_for_eu(targets1, words, g_eu)
        if i in DIVERGENT:
            text4, entities4 = drifted(text, entities, i)
            emb4 = rotated(base, 14.0 / 15.0, rng(4, i))
            trace4 = steps_for_eu(targets2, text4.split(), g_eu)
        else:
            text4, entities4, emb4 = text, list(entities), list(emb1)
            trace4 = steps_for_eu(targets1, words, g_eu)
        records.append(gen_record("g-tp1", inst, "1", text, entities, emb1, trace1))
        records.append(gen_record("g-tp4", inst, "4", text4, entities4, emb4, trace4))
    return records


def build_within() -> list[RunRecord]:
    records = []
    for i in range(10):
        inst = f"w{i:02d}"
        text, entities = narrative(100 + i)
        for tp in ("1", "4"):
            emb = [float(c) for c in unit_vector(rng(5, i, int(tp)), DIM)]
            targets = strong_targets(rng(6, i, int(tp)), T_CROSS)
            trace = steps_for_eu(targets, text.split(), rng(7, i))
            for r in range(2):  # identical runs within a config
                records.append(gen_record(f"g-tp{tp}-r{r}", inst, tp, text, list(entities), list(emb), trace))
    return records


def build_calibration() -> list[RunRecord]:
    records = []
    for i in range(5):
        inst = f"c{i:02d}"
        text, entities = narrative(200 + i)
        emb = [float(c) for c in unit_vector(rng(8, i), DIM)]
        targets = strong_targets(rng(9, i), T_CALIB)
        if i == 4:
            # sparse hard-token tail: lifts the calibrated threshold above the
            # bulk so every bulk token passes the strict EU < theta test
            targets[T_CALIB - 1] = 0.20
        trace = steps_for_eu(targets, text.split(), rng(10, i))
        for r in range(2):
            records.append(gen_record(f"calib-r{r}", inst, "1", text, list(entities), list(emb), trace))
    return records


def main():
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    cross = build_cross()
    within = build_within()
    calib = build_calibration()
    (OUT_DIR / "cross_tp.jsonl").write_bytes(serialize_corpus(cross))
    (OUT_DIR / "within_tp.jsonl").write_bytes(serialize_corpus(within))
    (OUT_DIR / "calibration.jsonl").write_bytes(serialize_corpus(calib))

    # freeze what the shipped pipeline computes over the shipped bytes
    calib_traces = [r.payload.logits for r in ingest(OUT_DIR / "calibration.jsonl").records]
    params_cross = AuditParameters(fixed_keys=[], calibration_traces=calib_traces)
    report_cross = build_report(ingest(OUT_DIR / "cross_tp.jsonl").records, params_cross)
    params_within = AuditParameters(fixed_keys=["tp"], calibration_traces=calib_traces)
    report_within = build_report(ingest(OUT_DIR / "within_tp.jsonl").records, params_within)

    seq_c = report_cross["layers"]["sequence"]["aggregate"]
    logit_c = report_cross["layers"]["logit"]["aggregate"]
    seq_w = report_within["layers"]["sequence"]["aggregate"]
    logit_w = report_within["layers"]["logit"]["aggregate"]
    expected = {
        "seed": SEED,
        "cross": {
            "em": seq_c["em"],
            "entity_jaccard": seq_c["entity_jaccard"],
            "match_score": seq_c["match_score"],
            "psd": seq_c["psd"],
            "tdi": logit_c["tdi"],
            "tdi_band": [0.75, 0.83],
            "theta_eu": logit_c["theta_eu"],
        },
        "within": {
            "em": seq_w["em"],
            "entity_jaccard": seq_w["entity_jaccard"],
            "match_score": seq_w["match_score"],
            "psd": seq_w["psd"],
            "tdi": logit_w["tdi"],
            "theta_eu": logit_w["theta_eu"],
        },
        "design": {
            "em_cross_target": 0.85,
            "entity_jaccard_cross_target": 0.97,
            "psd_cross_rounded": 0.99,
            "divergent_prompts": sorted(DIVERGENT),
        },
    }
    (OUT_DIR / "expected.json").write_bytes(canonical_serialize(expected) + b"\n")

    print("cross:", {k: expected["cross"][k] for k in ("em", "entity_jaccard", "psd", "tdi", "theta_eu")})
    print("within:", {k: expected["within"][k] for k in ("em", "psd", "tdi")})


if __name__ == "__main__":
    main()
