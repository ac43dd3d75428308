"""Feature-attribution stability metrics over ranking run sets.

All pairwise means use the N(N-1)/2 unordered pairs of a run set, and all
aggregation iterates in sorted (instance_id, run_id) order, so repeated
audits of the same corpus are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .records import AttributionRanking, RunSet

__all__ = [
    "RankStabilityResult",
    "jaccard_at_k",
    "rbo",
    "rank_span",
    "stability_summary",
]


def _top_k_set(ranking: AttributionRanking, k: int) -> set[str]:
    ids = ranking.feature_ids()
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > len(ids):
        raise ValueError(f"k={k} exceeds ranking length {len(ids)}; top-k is ambiguous")
    return set(ids[:k])


def jaccard_at_k(r1: AttributionRanking, r2: AttributionRanking, k: int) -> float:
    """Top-k Jaccard: |S1 ∩ S2| / |S1 ∪ S2| over the first k features."""
    s1 = _top_k_set(r1, k)
    s2 = _top_k_set(r2, k)
    return len(s1 & s2) / len(s1 | s2)


def rbo(r1: AttributionRanking, r2: AttributionRanking, p: float, extrapolate: bool = True) -> float:
    """Rank-biased overlap with geometric decay p for two finite rankings.

    The depth-d agreement A_d is the overlap of the two depth-d prefixes
    divided by d. The truncated sum (1-p) * sum_{d=1..D} p^(d-1) * A_d
    weighs early ranks most; with extrapolate=True the tail term A_D * p^D
    is added (tail persistence), so identical lists score exactly 1.0.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"decay p must be in (0,1), got {p}")
    ids1 = r1.feature_ids()
    ids2 = r2.feature_ids()
    if set(ids1) != set(ids2):
        raise ValueError("rankings cover different feature universes")
    if ids1 == ids2 and extrapolate:
        # tail persistence makes identical lists score exactly 1.0
        return 1.0
    depth = len(ids1)
    seen1: set[str] = set()
    seen2: set[str] = set()
    overlap = 0
    total = 0.0
    weight = 1.0  # p^(d-1)
    a_d = 0.0
    for d in range(1, depth + 1):
        x, y = ids1[d - 1], ids2[d - 1]
        if x == y:
            overlap += 1
        else:
            if x in seen2:
                overlap += 1
            if y in seen1:
                overlap += 1
            seen1.add(x)
            seen2.add(y)
        a_d = overlap / d
        total += (1.0 - p) * weight * a_d
        weight *= p
    if extrapolate:
        total += a_d * weight  # a_D * p^D
    return total


def rank_span(rankings: list[AttributionRanking]) -> dict[str, int]:
    """Per-feature span of 1-based rank positions across runs (max - min)."""
    if len(rankings) < 2:
        raise ValueError(f"rank_span needs >= 2 runs, got {len(rankings)}")
    universe = set(rankings[0].feature_ids())
    lo: dict[str, int] = {}
    hi: dict[str, int] = {}
    for ranking in rankings:
        ids = ranking.feature_ids()
        if set(ids) != universe:
            raise ValueError("rankings cover different feature universes")
        for pos, fid in enumerate(ids, start=1):
            if fid not in lo:
                lo[fid] = hi[fid] = pos
            else:
                lo[fid] = min(lo[fid], pos)
                hi[fid] = max(hi[fid], pos)
    return {fid: hi[fid] - lo[fid] for fid in sorted(universe)}


@dataclass
class RankStabilityResult:
    j_at_k: dict[int, float]
    rbo: float
    rank_span: dict[str, int]
    n_runs: int
    p: float


@dataclass
class RankStabilitySummary:
    per_set: dict[str, RankStabilityResult]
    aggregate: RankStabilityResult
    warnings: list[str] = field(default_factory=list)


def _set_label(rs: RunSet) -> str:
    return f"{rs.instance_id}|{rs.group_key}" if rs.group_key else rs.instance_id


def stability_summary(runsets: list[RunSet], ks: list[int], p: float) -> RankStabilitySummary:
    """Mean pairwise J@k and RBO per run set, then means over sets.

    Sets with fewer than 2 runs are excluded and reported in warnings.
    The aggregate rank_span is the per-feature maximum across sets
    (worst case observed anywhere).
    """
    ks = sorted(set(ks))
    per_set: dict[str, RankStabilityResult] = {}
    warnings: list[str] = []
    usable: list[tuple[str, RankStabilityResult]] = []

    ordered = sorted(runsets, key=lambda rs: (rs.instance_id, rs.group_key))
    for rs in ordered:
        label = _set_label(rs)
        if rs.n_runs < 2:
            warnings.append(f"run set {label} has {rs.n_runs} run(s); excluded from rank metrics")
            continue
        rankings = []
        for rec in rs.records:
            if not isinstance(rec.payload, AttributionRanking):
                raise ValueError(f"run set {label} payload is not a ranking")
            rankings.append(rec.payload)
        n = len(rankings)
        j_sums = {k: 0.0 for k in ks}
        rbo_sum = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                for k in ks:
                    j_sums[k] += jaccard_at_k(rankings[i], rankings[j], k)
                rbo_sum += rbo(rankings[i], rankings[j], p)
        pairs = n * (n - 1) // 2
        result = RankStabilityResult(
            j_at_k={k: j_sums[k] / pairs for k in ks},
            rbo=rbo_sum / pairs,
            rank_span=rank_span(rankings),
            n_runs=n,
            p=p,
        )
        per_set[label] = result
        usable.append((label, result))

    if not usable:
        raise ValueError("no run set with >= 2 runs; rank metrics undefined")

    n_sets = len(usable)
    agg_j = {k: sum(res.j_at_k[k] for _, res in usable) / n_sets for k in ks}
    agg_rbo = sum(res.rbo for _, res in usable) / n_sets
    agg_span: dict[str, int] = {}
    for _, res in usable:
        for fid, span in res.rank_span.items():
            agg_span[fid] = max(agg_span.get(fid, 0), span)
    aggregate = RankStabilityResult(
        j_at_k=agg_j,
        rbo=agg_rbo,
        rank_span=dict(sorted(agg_span.items())),
        n_runs=sum(res.n_runs for _, res in usable),
        p=p,
    )
    return RankStabilitySummary(per_set=per_set, aggregate=aggregate, warnings=warnings)
