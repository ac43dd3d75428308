"""Output-side text and trace determinism metrics.

Exact match asks whether runs are byte-identical; entity Jaccard and
matching-based unit scoring ask whether they carry the same information
units; PSD asks whether they mean the same thing. The three are reported
together because a high PSD can mask divergences in critical content.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .embedding import cosine_similarity
from .records import ActionTrace, GenerationOutput, RunSet

__all__ = [
    "SequenceStabilityResult",
    "normalize_unit",
    "levenshtein",
    "first_divergence",
    "exact_match",
    "entity_jaccard",
    "match_score",
    "trajectory_edit",
    "psd",
]

_WS = re.compile(r"\s+")


def normalize_unit(s: str) -> str:
    """Case-fold, trim, and collapse internal whitespace."""
    return _WS.sub(" ", s.strip()).casefold()


def levenshtein(a, b) -> int:
    """Unit-cost edit distance between two sequences (strings or symbol lists)."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, sym_a in enumerate(a, start=1):
        cur = [i]
        for j, sym_b in enumerate(b, start=1):
            cost = 0 if sym_a == sym_b else 1
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost))
        prev = cur
    return prev[-1]


def first_divergence(a, b) -> Optional[int]:
    """Index of the first position where two sequences differ, None if equal."""
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i
    if len(a) != len(b):
        return min(len(a), len(b))
    return None


def _generations(rs: RunSet) -> list[GenerationOutput]:
    outs = []
    for rec in rs.records:
        if not isinstance(rec.payload, GenerationOutput):
            raise ValueError(
                f"run set ({rs.instance_id!r}, {rs.group_key!r}) payload is not a generation"
            )
        outs.append(rec.payload)
    return outs


def _require_pairs(n: int, what: str) -> int:
    if n < 2:
        raise ValueError(f"{what} needs >= 2 runs, got {n}")
    return n * (n - 1) // 2


def exact_match(rs: RunSet) -> float:
    """Fraction of unordered run pairs with byte-identical text."""
    outs = _generations(rs)
    pairs = _require_pairs(len(outs), "exact_match")
    texts = [o.text.encode("utf-8") for o in outs]
    hits = 0
    for i in range(len(texts)):
        for j in range(i + 1, len(texts)):
            if texts[i] == texts[j]:
                hits += 1
    return hits / pairs


def _set_jaccard(e1: set[str], e2: set[str]) -> float:
    if not e1 and not e2:
        return 1.0  # absence agreed is agreement
    return len(e1 & e2) / len(e1 | e2)


def entity_jaccard(rs: RunSet) -> float:
    """Mean pairwise Jaccard over normalized entity sets."""
    outs = _generations(rs)
    pairs = _require_pairs(len(outs), "entity_jaccard")
    sets = [{normalize_unit(e) for e in o.entities} for o in outs]
    total = 0.0
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            total += _set_jaccard(sets[i], sets[j])
    return total / pairs


def unit_similarity(a: str, b: str) -> float:
    """Normalized edit similarity 1 - lev(a,b)/max(|a|,|b|) on normalized strings."""
    a = normalize_unit(a)
    b = normalize_unit(b)
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


def match_score(u1: list[str], u2: list[str], tau: float = 0.9) -> float:
    """Fraction of information units aligned by an exact optimal assignment.

    Builds the pairwise similarity matrix, solves the maximum-weight
    bipartite assignment exactly, and counts aligned pairs whose similarity
    reaches tau. Score = matches / max(|u1|, |u2|).
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0,1], got {tau}")
    if not u1 and not u2:
        return 1.0
    if not u1 or not u2:
        return 0.0
    sim = np.zeros((len(u1), len(u2)))
    for i, a in enumerate(u1):
        for j, b in enumerate(u2):
            sim[i, j] = unit_similarity(a, b)
    rows, cols = linear_sum_assignment(sim, maximize=True)
    matches = int(sum(1 for i, j in zip(rows, cols) if sim[i, j] >= tau))
    return matches / max(len(u1), len(u2))


def pairwise_match_score(rs: RunSet, tau: float = 0.9) -> float:
    """Mean pairwise match_score over the entity lists of a run set."""
    outs = _generations(rs)
    pairs = _require_pairs(len(outs), "match_score")
    total = 0.0
    for i in range(len(outs)):
        for j in range(i + 1, len(outs)):
            total += match_score(outs[i].entities, outs[j].entities, tau)
    return total / pairs


@dataclass
class TrajectoryEditResult:
    raw: float
    normalized: float
    divergence_points: list[Optional[int]]  # per pair, first differing index


def trajectory_edit(rs: RunSet) -> TrajectoryEditResult:
    """Mean pairwise edit distance over action sequences, raw and normalized.

    Normalization divides each pair's distance by the longer trace length
    before averaging; a pair of empty traces contributes 0. Divergence
    points pinpoint where each pair of trajectories first drifted.
    """
    traces = []
    for rec in rs.records:
        if not isinstance(rec.payload, ActionTrace):
            raise ValueError(
                f"run set ({rs.instance_id!r}, {rs.group_key!r}) payload is not a trace"
            )
        traces.append(rec.payload.actions)
    pairs = _require_pairs(len(traces), "trajectory_edit")
    raw_sum = 0.0
    norm_sum = 0.0
    points: list[Optional[int]] = []
    for i in range(len(traces)):
        for j in range(i + 1, len(traces)):
            dist = levenshtein(traces[i], traces[j])
            raw_sum += dist
            longest = max(len(traces[i]), len(traces[j]))
            norm_sum += dist / longest if longest else 0.0
            points.append(first_divergence(traces[i], traces[j]))
    return TrajectoryEditResult(raw=raw_sum / pairs, normalized=norm_sum / pairs, divergence_points=points)


def psd(rs: RunSet) -> float:
    """Pairwise semantic determinism: mean pairwise cosine of run embeddings.

    Semantic similarity is operationalized as cosine over the sentence
    embeddings supplied with each run, so the metric stays computable
    without model internals. Raises if any run lacks an embedding; the
    caller reports the omission rather than silently skipping pairs.
    """
    outs = _generations(rs)
    pairs = _require_pairs(len(outs), "psd")
    embs = []
    for idx, o in enumerate(outs):
        if o.embedding is None:
            raise ValueError(
                f"run {rs.records[idx].run_id!r} has no embedding; PSD not computable"
            )
        embs.append(o.embedding)
    dim = len(embs[0])
    for e in embs[1:]:
        if len(e) != dim:
            raise ValueError("embedding dimension mismatch within run set")
    total = 0.0
    for i in range(len(embs)):
        for j in range(i + 1, len(embs)):
            total += cosine_similarity(embs[i], embs[j])
    return total / pairs


@dataclass
class SequenceStabilityResult:
    em: float
    entity_jaccard: float
    match_score: float
    tau: float
    trajectory_raw: Optional[float] = None
    trajectory_normalized: Optional[float] = None
    psd: Optional[float] = None
    psd_clamped: Optional[float] = None
    warnings: list[str] = field(default_factory=list)


def clamp_unit(x: float) -> float:
    return max(0.0, min(1.0, x))
