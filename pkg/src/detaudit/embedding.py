"""Latent-drift and decision-stability metrics over embedding and scalar run sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .records import EmbeddingVector, RunSet, ScalarPrediction

__all__ = [
    "EmbeddingStabilityResult",
    "cosine_similarity",
    "d_cos",
    "flip_rate",
    "ddr",
]


def cosine_similarity(a: list[float], b: list[float]) -> float:
    """Cosine of two vectors, normalized defensively.

    Bit-identical vectors short-circuit to exactly 1.0 so that perfectly
    deterministic run sets report exactly zero drift.
    """
    if len(a) != len(b):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(b)}")
    if a == b:
        daa = math.fsum(x * x for x in a)
        if daa == 0.0:
            raise ValueError("cosine undefined for zero vector")
        return 1.0
    dab = math.fsum(x * y for x, y in zip(a, b))
    daa = math.fsum(x * x for x in a)
    dbb = math.fsum(y * y for y in b)
    if daa == 0.0 or dbb == 0.0:
        raise ValueError("cosine undefined for zero vector")
    sim = dab / math.sqrt(daa * dbb)
    return max(-1.0, min(1.0, sim))


def _vectors(rs: RunSet) -> list[list[float]]:
    vecs = []
    for rec in rs.records:
        payload = rec.payload
        if isinstance(payload, EmbeddingVector):
            vecs.append(payload.values)
        else:
            raise ValueError(
                f"run set ({rs.instance_id!r}, {rs.group_key!r}) payload is not an embedding"
            )
    return vecs


def d_cos(rs: RunSet) -> float:
    """Mean pairwise cosine distance across the N runs of one instance.

    (2 / N(N-1)) * sum_{i<j} (1 - cos(h_i, h_j)), in [0, 2]. Zero iff all
    vectors point the same way; 2 means consistently opposite.
    """
    vecs = _vectors(rs)
    n = len(vecs)
    if n < 2:
        raise ValueError(f"d_cos needs >= 2 runs, got {n}")
    dim = len(vecs[0])
    for v in vecs[1:]:
        if len(v) != dim:
            raise ValueError("dimension mismatch within run set")
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += 1.0 - cosine_similarity(vecs[i], vecs[j])
    return total / (n * (n - 1) / 2)


def _label_of(payload) -> str:
    if isinstance(payload, ScalarPrediction):
        return payload.label
    if isinstance(payload, EmbeddingVector):
        if payload.label is None:
            raise ValueError("embedding record has no label; flip rate undefined")
        return payload.label
    raise ValueError(f"payload kind {type(payload).kind!r} carries no label")


def flip_rate(runsets: list[RunSet]) -> tuple[float, float]:
    """Decision-level instability over labeled run sets.

    Returns (flip_rate, majority_agreement): the fraction of instances whose
    runs do not all share one label, and the mean modal-label share. Modal
    ties break toward the lexicographically smallest label (the share is
    unaffected; the rule pins which label would be reported).
    """
    if not runsets:
        raise ValueError("flip_rate needs at least one run set")
    flipped = 0
    agreement_sum = 0.0
    ordered = sorted(runsets, key=lambda rs: (rs.instance_id, rs.group_key))
    for rs in ordered:
        if rs.n_runs < 2:
            raise ValueError(
                f"run set ({rs.instance_id!r}, {rs.group_key!r}) has {rs.n_runs} run(s)"
            )
        labels = [_label_of(rec.payload) for rec in rs.records]
        counts: dict[str, int] = {}
        for lab in labels:
            counts[lab] = counts.get(lab, 0) + 1
        _, modal_count = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if len(counts) > 1:
            flipped += 1
        agreement_sum += modal_count / len(labels)
    n = len(ordered)
    return flipped / n, agreement_sum / n


@dataclass
class DdrResult:
    ddr: Optional[float]
    signal_variance: float
    noise_variance: float
    deterministic: bool  # noise exactly zero


def _variance(values: list[float]) -> float:
    n = len(values)
    mean = sum(values) / n
    return sum((v - mean) ** 2 for v in values) / (n - 1)


def ddr(runsets: list[RunSet]) -> DdrResult:
    """Signal-to-noise ratio of repeated scalar predictions.

    Signal per instance is the across-run mean score; noise is the residuals
    around it. DDR = Var_instances(signal) / mean_instances(Var_runs(noise)),
    with unbiased sample variances. A zero noise term means the scores are
    perfectly deterministic; ddr is then None with deterministic=True.
    """
    ordered = sorted(runsets, key=lambda rs: (rs.instance_id, rs.group_key))
    if len(ordered) < 2:
        raise ValueError(f"ddr needs >= 2 instances, got {len(ordered)}")
    signals: list[float] = []
    noise_vars: list[float] = []
    for rs in ordered:
        if rs.n_runs < 2:
            raise ValueError(
                f"run set ({rs.instance_id!r}, {rs.group_key!r}) has {rs.n_runs} run(s)"
            )
        scores = []
        for rec in rs.records:
            if not isinstance(rec.payload, ScalarPrediction):
                raise ValueError("ddr requires scalar prediction payloads")
            scores.append(rec.payload.score)
        mean = sum(scores) / len(scores)
        signals.append(mean)
        noise_vars.append(_variance([s - mean for s in scores]))
    signal_var = _variance(signals)
    noise_var = sum(noise_vars) / len(noise_vars)
    if noise_var == 0.0:
        return DdrResult(ddr=None, signal_variance=signal_var, noise_variance=0.0, deterministic=True)
    return DdrResult(
        ddr=signal_var / noise_var,
        signal_variance=signal_var,
        noise_variance=noise_var,
        deterministic=False,
    )


@dataclass
class EmbeddingStabilityResult:
    d_cos_per_set: dict[str, float]
    d_cos_mean: float
    flip_rate: Optional[float] = None
    majority_agreement: Optional[float] = None
    warnings: list[str] = field(default_factory=list)
