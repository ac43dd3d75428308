"""Layered determinism report: per-layer metric sections over grouped run sets.

The report is a plain JSON tree so it can be canonically serialized,
hashed, and appended to the audit ledger. Everything is computed in sorted
(instance_id, group_key, run_id) order with double-precision sequential
aggregation: the audit tool must not exhibit the nondeterminism it
measures, so identical inputs and flags yield byte-identical reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from . import __version__
from .embedding import d_cos, ddr, flip_rate
from .logit import calibrate_theta, tdi
from .rank import stability_summary
from .records import (
    ActionTrace,
    AttributionRanking,
    EmbeddingVector,
    GenerationOutput,
    LogitTrace,
    RunRecord,
    RunSet,
    ScalarPrediction,
    group,
)
from .sequence import (
    clamp_unit,
    entity_jaccard,
    exact_match,
    pairwise_match_score,
    psd,
    trajectory_edit,
)

__all__ = ["AuditParameters", "EmptyMetricSet", "build_report", "render_markdown"]

SCHEMA_VERSION = 1

ALL_LAYERS = ("rank", "embedding", "sequence", "logit", "prediction")

CONVENTIONS = {
    "ranking_tie_break": "attribution magnitude descending, feature_id ascending",
    "pairwise_mean": "all N(N-1)/2 unordered run pairs",
    "rbo_mode": "extrapolated (tail persistence)",
    "ddr_estimator": "signal = per-instance across-run mean; noise = residuals; unbiased variances",
    "alpha_shift": "alpha_k = logit_k - min(top-K logits) + 1.0",
    "flip_rule": "any disagreement counts as flipped; majority share reported alongside",
    "aggregation_order": "sorted (instance_id, group_key, run_id), sequential double precision",
}


class EmptyMetricSet(RuntimeError):
    """No applicable run set with >= 2 runs for any requested layer."""


@dataclass
class AuditParameters:
    layers: list[str] = field(default_factory=lambda: ["auto"])
    fixed_keys: list[str] = field(default_factory=list)
    ks: list[int] = field(default_factory=lambda: [3, 5])
    p: float = 0.9
    tau: float = 0.9
    theta_eu: Optional[float] = None
    calibration_traces: Optional[list[LogitTrace]] = None
    calibration_quantile: float = 0.99
    sources: dict[str, str] = field(default_factory=dict)  # parameter -> flag|config|default


def _set_label(rs: RunSet) -> str:
    return f"{rs.instance_id}|{rs.group_key}" if rs.group_key else rs.instance_id


def _usable(runsets: list[RunSet], kind: str, warnings: list[str]) -> list[RunSet]:
    out = []
    for rs in runsets:
        if type(rs.records[0].payload).kind != kind:
            continue
        if rs.n_runs < 2:
            warnings.append(f"run set {_set_label(rs)} has 1 run; excluded from {kind} metrics")
            continue
        out.append(rs)
    return out


def _auto_layers(records: list[RunRecord]) -> list[str]:
    layers = set()
    for rec in records:
        payload = rec.payload
        if isinstance(payload, AttributionRanking):
            layers.add("rank")
        elif isinstance(payload, EmbeddingVector):
            layers.add("embedding")
        elif isinstance(payload, GenerationOutput):
            layers.add("sequence")
            if payload.logits is not None:
                layers.add("logit")
        elif isinstance(payload, ActionTrace):
            layers.add("sequence")
        elif isinstance(payload, ScalarPrediction):
            layers.add("prediction")
            layers.add("embedding")
    return [layer for layer in ALL_LAYERS if layer in layers]


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def _rank_section(runsets, params: AuditParameters, warnings: list[str]) -> Optional[dict]:
    usable = _usable(runsets, "ranking", warnings)
    if not usable:
        return None
    summary = stability_summary(usable, ks=params.ks, p=params.p)
    warnings.extend(summary.warnings)

    def as_dict(res):
        return {
            "j_at_k": {str(k): v for k, v in res.j_at_k.items()},
            "rbo": res.rbo,
            "rank_span": res.rank_span,
            "n_runs": res.n_runs,
        }

    return {
        "aggregate": as_dict(summary.aggregate) | {"n_sets": len(summary.per_set)},
        "per_set": {label: as_dict(res) for label, res in summary.per_set.items()},
    }


def _embedding_section(runsets, warnings: list[str]) -> Optional[dict]:
    emb_sets = _usable(runsets, "embedding", warnings)
    scalar_sets = _usable(runsets, "scalar", warnings)
    section: dict[str, Any] = {}
    if emb_sets:
        per_set = {}
        for rs in emb_sets:
            per_set[_set_label(rs)] = {"d_cos": d_cos(rs)}
        section["per_set"] = per_set
        section["aggregate"] = {"d_cos": _mean([v["d_cos"] for v in per_set.values()]), "n_sets": len(per_set)}
        labeled = [rs for rs in emb_sets if all(r.payload.label is not None for r in rs.records)]
        if labeled:
            fr, agr = flip_rate(labeled)
            section["aggregate"]["flip_rate"] = fr
            section["aggregate"]["majority_agreement"] = agr
            if len(labeled) < len(emb_sets):
                warnings.append("some embedding run sets lack labels; flip rate covers the labeled subset")
    if scalar_sets:
        fr, agr = flip_rate(scalar_sets)
        agg = section.setdefault("aggregate", {})
        agg.setdefault("flip_rate", fr)
        agg.setdefault("majority_agreement", agr)
        agg.setdefault("n_sets", len(scalar_sets))
    return section or None


def _sequence_section(runsets, params: AuditParameters, warnings: list[str]) -> Optional[dict]:
    gen_sets = _usable(runsets, "generation", warnings)
    trace_sets = _usable(runsets, "trace", warnings)
    section: dict[str, Any] = {}
    per_set: dict[str, dict] = {}
    if gen_sets:
        psd_values = []
        for rs in gen_sets:
            entry: dict[str, Any] = {
                "em": exact_match(rs),
                "entity_jaccard": entity_jaccard(rs),
                "match_score": pairwise_match_score(rs, tau=params.tau),
            }
            try:
                raw = psd(rs)
                entry["psd"] = raw
                entry["psd_clamped"] = clamp_unit(raw)
                psd_values.append(raw)
            except ValueError as exc:
                entry["psd"] = None
                warnings.append(f"PSD omitted for run set {_set_label(rs)}: {exc}")
            per_set[_set_label(rs)] = entry
        aggregate: dict[str, Any] = {
            "em": _mean([per_set[_set_label(rs)]["em"] for rs in gen_sets]),
            "entity_jaccard": _mean([per_set[_set_label(rs)]["entity_jaccard"] for rs in gen_sets]),
            "match_score": _mean([per_set[_set_label(rs)]["match_score"] for rs in gen_sets]),
            "tau": params.tau,
            "n_sets": len(gen_sets),
        }
        if len(psd_values) == len(gen_sets):
            agg_psd = _mean(psd_values)
            aggregate["psd"] = agg_psd
            aggregate["psd_clamped"] = clamp_unit(agg_psd)
        else:
            aggregate["psd"] = None
        section["aggregate"] = aggregate
    if trace_sets:
        raws, norms = [], []
        for rs in trace_sets:
            res = trajectory_edit(rs)
            per_set[_set_label(rs)] = {
                "trajectory_edit_raw": res.raw,
                "trajectory_edit_normalized": res.normalized,
                "divergence_points": res.divergence_points,
            }
            raws.append(res.raw)
            norms.append(res.normalized)
        agg = section.setdefault("aggregate", {})
        agg["trajectory_edit_raw"] = _mean(raws)
        agg["trajectory_edit_normalized"] = _mean(norms)
        agg["n_trace_sets"] = len(trace_sets)
    if per_set:
        section["per_set"] = per_set
    return section or None


def _logit_section(runsets, params: AuditParameters, warnings: list[str]) -> Optional[dict]:
    gen_sets = _usable(runsets, "generation", warnings)
    sets_with_traces = []
    for rs in gen_sets:
        traces = [rec.payload.logits for rec in rs.records]
        if all(t is not None for t in traces):
            sets_with_traces.append((rs, traces))
        elif any(t is not None for t in traces):
            warnings.append(f"run set {_set_label(rs)} has partial logit traces; excluded from logit layer")
    if not sets_with_traces:
        return None

    if params.theta_eu is not None:
        theta = params.theta_eu
        theta_source = "explicit"
    elif params.calibration_traces is not None:
        theta = calibrate_theta(params.calibration_traces, quantile=params.calibration_quantile)
        theta_source = "calibrated"
    else:
        pooled = [t for _, traces in sets_with_traces for t in traces]
        theta = calibrate_theta(pooled, quantile=params.calibration_quantile)
        theta_source = "self-calibrated"
        warnings.append(
            "theta_eu self-calibrated from the audited corpus; supply within-config "
            "reference traces for a meaningful threshold"
        )

    per_set = {}
    set_means = []
    flagged_total = 0
    n_traces = 0
    for rs, traces in sets_with_traces:
        values = []
        for trace in traces:
            res = tdi(trace, theta)
            values.append(res.tdi)
            flagged_total += len(res.flagged_positions)
            n_traces += 1
        mean_tdi = _mean(values)
        per_set[_set_label(rs)] = {"tdi": mean_tdi, "n_traces": len(values)}
        set_means.append(mean_tdi)
    return {
        "aggregate": {
            "tdi": _mean(set_means),
            "theta_eu": theta,
            "theta_source": theta_source,
            "calibration_quantile": params.calibration_quantile,
            "n_sets": len(per_set),
            "n_traces": n_traces,
            "flagged_tokens": flagged_total,
        },
        "per_set": per_set,
    }


def _prediction_section(runsets, warnings: list[str]) -> Optional[dict]:
    scalar_sets = _usable(runsets, "scalar", warnings)
    if len(scalar_sets) < 2:
        if scalar_sets:
            warnings.append("fewer than 2 scalar run sets; DDR undefined")
        return None
    res = ddr(scalar_sets)
    if res.deterministic:
        warnings.append("noise variance is exactly 0: scores are perfectly deterministic; DDR reported as null")
    return {
        "ddr": res.ddr,
        "signal_variance": res.signal_variance,
        "noise_variance": res.noise_variance,
        "deterministic": res.deterministic,
        "n_sets": len(scalar_sets),
    }


def build_report(
    records: list[RunRecord],
    params: AuditParameters,
    skipped_lines: int = 0,
    input_name: str = "",
) -> dict:
    """Compute the requested layers over grouped records and assemble the report.

    Raises EmptyMetricSet if nothing is computable (e.g. every run set has a
    single run), and ValueError for structural problems.
    """
    runsets = group(records, params.fixed_keys)
    requested = list(params.layers)
    if requested in (["auto"], []):
        requested = _auto_layers(records)
    elif requested == ["all"]:
        requested = list(ALL_LAYERS)
    unknown = [l for l in requested if l not in ALL_LAYERS]
    if unknown:
        raise ValueError(f"unknown layer(s): {unknown}")

    warnings: list[str] = []
    layers: dict[str, Any] = {}
    builders = {
        "rank": lambda: _rank_section(runsets, params, warnings),
        "embedding": lambda: _embedding_section(runsets, warnings),
        "sequence": lambda: _sequence_section(runsets, params, warnings),
        "logit": lambda: _logit_section(runsets, params, warnings),
        "prediction": lambda: _prediction_section(runsets, warnings),
    }
    for layer in ALL_LAYERS:
        if layer not in requested:
            continue
        try:
            section = builders[layer]()
        except ValueError as exc:
            if "no run set with >= 2 runs" in str(exc):
                section = None
                warnings.append(f"{layer} layer skipped: {exc}")
            else:
                raise
        if section is not None:
            layers[layer] = section
    if not layers:
        raise EmptyMetricSet(
            "no applicable metric could be computed; need at least one run set with >= 2 runs"
        )

    return {
        "schema_version": SCHEMA_VERSION,
        "metadata": {
            "tool": "detaudit",
            "tool_version": __version__,
            "input": input_name,
            "n_records": len(records),
            "n_run_sets": len(runsets),
            "skipped_lines": skipped_lines,
            "grouping_keys": sorted(set(params.fixed_keys)),
            "layers_requested": requested,
            "layers_computed": sorted(layers),
            "parameters": {
                "ks": sorted(set(params.ks)),
                "p": params.p,
                "tau": params.tau,
                "theta_eu": params.theta_eu,
                "calibration_quantile": params.calibration_quantile,
            },
            "parameter_sources": dict(sorted(params.sources.items())),
            "conventions": CONVENTIONS,
        },
        "layers": layers,
        "warnings": warnings,
    }


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def render_markdown(report: dict) -> str:
    """Human-readable twin of report.json, generated from it and never recomputed."""
    meta = report["metadata"]
    lines = [
        "# Determinism audit report",
        "",
        f"- tool: {meta['tool']} {meta['tool_version']}",
        f"- input: `{meta['input']}`" if meta.get("input") else "- input: (in-memory)",
        f"- records: {meta['n_records']} in {meta['n_run_sets']} run set(s); grouping keys: "
        + (", ".join(meta["grouping_keys"]) or "(none: all runs per instance pooled)"),
        f"- layers: {', '.join(meta['layers_computed'])}",
        "",
        "| layer | metric | value |",
        "|---|---|---|",
    ]
    rows: list[tuple[str, str, Any]] = []
    layers = report["layers"]
    if "rank" in layers:
        agg = layers["rank"]["aggregate"]
        for k, v in agg["j_at_k"].items():
            rows.append(("rank", f"J@{k}", v))
        rows.append(("rank", "RBO", agg["rbo"]))
        span = agg["rank_span"]
        rows.append(("rank", "max rank span", max(span.values()) if span else 0))
    if "embedding" in layers:
        agg = layers["embedding"]["aggregate"]
        for key, label in (("d_cos", "D_cos"), ("flip_rate", "flip rate"), ("majority_agreement", "majority agreement")):
            if key in agg:
                rows.append(("embedding", label, agg[key]))
    if "sequence" in layers:
        agg = layers["sequence"]["aggregate"]
        for key, label in (
            ("em", "exact match"),
            ("entity_jaccard", "entity Jaccard"),
            ("match_score", f"match score (tau={_fmt(agg.get('tau'))})"),
            ("psd", "PSD"),
            ("trajectory_edit_raw", "trajectory edit (raw)"),
            ("trajectory_edit_normalized", "trajectory edit (normalized)"),
        ):
            if key in agg:
                rows.append(("sequence", label, agg[key]))
    if "logit" in layers:
        agg = layers["logit"]["aggregate"]
        rows.append(("logit", f"TDI (theta_EU={_fmt(agg['theta_eu'])}, {agg['theta_source']})", agg["tdi"]))
        rows.append(("logit", "flagged tokens", agg["flagged_tokens"]))
    if "prediction" in layers:
        sec = layers["prediction"]
        rows.append(("prediction", "DDR", sec["ddr"]))
        rows.append(("prediction", "signal variance", sec["signal_variance"]))
        rows.append(("prediction", "noise variance", sec["noise_variance"]))
    for layer, metric, value in rows:
        lines.append(f"| {layer} | {metric} | {_fmt(value)} |")
    if report["warnings"]:
        lines.append("")
        lines.append("## Warnings")
        lines.append("")
        for w in report["warnings"]:
            lines.append(f"- {w}")
    lines.append("")
    return "\n".join(lines)
