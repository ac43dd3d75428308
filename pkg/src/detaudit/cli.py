"""Command-line surface: ingest, audit, simulate, ledger, version.

Exit codes are fixed so CI pipelines can gate on audit outcomes:
0 success, 1 gate/verification failure, 2 validation failure,
3 empty applicable metric set, 4 ledger lock conflict.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path
from typing import Optional

import click

from . import __version__
from .canonical import canonical_serialize
from .ledger import LedgerError, LockHeldError
from .ledger import append as ledger_append
from .ledger import verify as ledger_verify
from .records import IngestError, ValidationError, ingest, serialize_corpus
from .report import AuditParameters, EmptyMetricSet, build_report, render_markdown
from .simulate import (
    ExplainerConfig,
    magnitude_spread_values,
    random_instances,
    random_model,
    reduction_order_spread,
    simulate_embedding_runs,
    simulate_explainer_runs,
)

EXIT_GATE = 1
EXIT_VALIDATION = 2
EXIT_EMPTY = 3
EXIT_LOCK = 4

OUT_DIR_ENV = "DETAUDIT_OUT_DIR"


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.version_option(__version__, prog_name="detaudit")
def main():
    """Determinism audit toolkit for multi-run model outputs."""


@main.command()
def version():
    """Print the tool version."""
    click.echo(f"detaudit {__version__}")


@main.command(name="ingest")
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--schema-mode", type=click.Choice(["strict", "lenient"]), default="strict", show_default=True)
def ingest_cmd(input_path: str, schema_mode: str):
    """Validate a JSONL run-record file and print an ingestion summary."""
    try:
        result = ingest(input_path, schema_mode=schema_mode)
    except IngestError as exc:
        _fail(EXIT_VALIDATION, str(exc))
    click.echo(f"records: {len(result.records)}")
    click.echo(f"skipped: {result.n_skipped}")
    for lineno, reason in result.skipped:
        click.echo(f"  line {lineno}: {reason}")


def _load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(EXIT_VALIDATION, f"cannot read config file {path}: {exc}")
    if not isinstance(cfg, dict):
        _fail(EXIT_VALIDATION, f"config file {path} must hold a JSON object")
    return cfg


def _resolve(name: str, flag_value, config: dict, default, sources: dict):
    """flag > config file > built-in default, with the source recorded."""
    if flag_value is not None:
        sources[name] = "flag"
        return flag_value
    if name in config:
        sources[name] = "config"
        return config[name]
    sources[name] = "default"
    return default


def _parse_int_list(text: str) -> list[int]:
    return [int(part) for part in str(text).replace(" ", "").split(",") if part]


def _gate_spec(gate: Optional[str]) -> dict:
    if gate is None:
        return {}
    candidate = Path(gate)
    try:
        raw = candidate.read_text(encoding="utf-8") if candidate.is_file() else gate
        spec = json.loads(raw)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(EXIT_VALIDATION, f"cannot parse gate spec: {exc}")
    if not isinstance(spec, dict):
        _fail(EXIT_VALIDATION, "gate spec must be a JSON object of metric-path -> {min/max}")
    return spec


def _lookup_metric(report: dict, dotted: str):
    node = report["layers"]
    for part in dotted.split("."):
        while isinstance(node, dict) and part not in node and "aggregate" in node:
            node = node["aggregate"]
        if not isinstance(node, dict) or part not in node:
            raise KeyError(dotted)
        node = node[part]
    return node


@main.command()
@click.argument("input_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--out-dir", type=click.Path(file_okay=False), default=None,
              help=f"Output directory for report.json/report.md (env {OUT_DIR_ENV}, default '.').")
@click.option("--layers", default=None, help="Comma list of rank,embedding,sequence,logit,prediction, or auto/all.")
@click.option("--group-by", default=None, help="Comma list of config keys held fixed when grouping runs.")
@click.option("--ks", default=None, help="Comma list of top-k depths for rank metrics.")
@click.option("--p", "p_decay", type=float, default=None, help="RBO decay parameter.")
@click.option("--tau", type=float, default=None, help="Match-score similarity threshold.")
@click.option("--theta-eu", type=float, default=None, help="Explicit epistemic-uncertainty threshold.")
@click.option("--calibrate-from", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Within-config JSONL corpus whose pooled token EU calibrates theta_EU.")
@click.option("--quantile", type=float, default=None, help="Calibration quantile for theta_EU.")
@click.option("--schema-mode", type=click.Choice(["strict", "lenient"]), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Optional JSON config file; flags override it.")
@click.option("--gate", default=None, help="JSON object or file: {'metric.path': {'min': x, 'max': y}}.")
def audit(input_path, out_dir, layers, group_by, ks, p_decay, tau, theta_eu,
          calibrate_from, quantile, schema_mode, config_path, gate):
    """Run the layered determinism audit and write report.json + report.md."""
    config = _load_config_file(config_path)
    sources: dict[str, str] = {}
    layers_v = _resolve("layers", layers, config, "auto", sources)
    group_v = _resolve("group_by", group_by, config, "", sources)
    ks_v = _resolve("ks", ks, config, [3, 5], sources)
    p_v = _resolve("p", p_decay, config, 0.9, sources)
    tau_v = _resolve("tau", tau, config, 0.9, sources)
    theta_v = _resolve("theta_eu", theta_eu, config, None, sources)
    calib_v = _resolve("calibrate_from", calibrate_from, config, None, sources)
    quant_v = _resolve("quantile", quantile, config, 0.99, sources)
    mode_v = _resolve("schema_mode", schema_mode, config, "strict", sources)
    gate_spec = _gate_spec(gate)

    try:
        result = ingest(input_path, schema_mode=mode_v)
    except (IngestError, ValidationError) as exc:
        _fail(EXIT_VALIDATION, str(exc))
    if not result.records:
        _fail(EXIT_EMPTY, "no valid records in input")

    calibration_traces = None
    if theta_v is None and calib_v:
        try:
            calib_result = ingest(calib_v, schema_mode="strict")
        except IngestError as exc:
            _fail(EXIT_VALIDATION, f"calibration corpus: {exc}")
        calibration_traces = [
            rec.payload.logits
            for rec in calib_result.records
            if getattr(rec.payload, "logits", None) is not None
        ]
        if not calibration_traces:
            _fail(EXIT_VALIDATION, "calibration corpus carries no logit traces")

    params = AuditParameters(
        layers=[s for s in str(layers_v).split(",") if s],
        fixed_keys=[s for s in str(group_v).split(",") if s],
        ks=_parse_int_list(ks_v) if isinstance(ks_v, str) else list(ks_v),
        p=float(p_v),
        tau=float(tau_v),
        theta_eu=None if theta_v is None else float(theta_v),
        calibration_traces=calibration_traces,
        calibration_quantile=float(quant_v),
        sources=sources,
    )
    try:
        report = build_report(
            result.records, params, skipped_lines=result.n_skipped, input_name=str(input_path)
        )
    except EmptyMetricSet as exc:
        _fail(EXIT_EMPTY, str(exc))
    except (ValidationError, ValueError) as exc:
        _fail(EXIT_VALIDATION, str(exc))

    out = Path(out_dir or os.environ.get(OUT_DIR_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_bytes(canonical_serialize(report) + b"\n")
    (out / "report.md").write_text(render_markdown(report), encoding="utf-8")
    click.echo(f"report written to {out / 'report.json'} and {out / 'report.md'}")

    failures = []
    for path, bounds in gate_spec.items():
        try:
            value = _lookup_metric(report, path)
        except KeyError:
            failures.append(f"{path}: metric not present in report")
            continue
        if value is None or not isinstance(value, (int, float)):
            failures.append(f"{path}: value {value!r} not comparable")
            continue
        if "min" in bounds and value < bounds["min"]:
            failures.append(f"{path}: {value} < min {bounds['min']}")
        if "max" in bounds and value > bounds["max"]:
            failures.append(f"{path}: {value} > max {bounds['max']}")
    if failures:
        for f in failures:
            click.echo(f"gate failed: {f}", err=True)
        sys.exit(EXIT_GATE)


def _write_corpus(records, out_path: Optional[str]):
    data = serialize_corpus(records)
    if out_path:
        Path(out_path).write_bytes(data)
        click.echo(f"{len(records)} records written to {out_path}")
    else:
        sys.stdout.buffer.write(data)


@main.group()
def simulate():
    """Synthetic nondeterminism generators."""


@simulate.command()
@click.option("--m", "m_features", type=int, default=20, show_default=True, help="Number of features.")
@click.option("--instances", type=int, default=50, show_default=True)
@click.option("--reruns", type=int, default=30, show_default=True, help="Executions per configuration.")
@click.option("--budgets", default="100,1000,10000", show_default=True,
              help="Comma list of Monte-Carlo sample budgets.")
@click.option("--exact/--no-exact", default=True, show_default=True, help="Include the exact explainer.")
@click.option("--pairs", type=int, default=None, help="Interaction pairs in the toy model (default M).")
@click.option("--pair-scale", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--out", "out_path", type=click.Path(dir_okay=False), default=None)
def shapley(m_features, instances, reruns, budgets, exact, pairs, pair_scale, seed, out_path):
    """Emit attribution rankings from exact and Monte-Carlo explainers."""
    model = random_model(m_features, kind="interaction", n_pairs=pairs, pair_scale=pair_scale, seed=seed)
    xs = random_instances(m_features, instances, seed=seed)
    grid = []
    if exact:
        grid.append(ExplainerConfig(estimator="exact"))
    grid.extend(ExplainerConfig(estimator="permutation_mc", n_samples=n) for n in _parse_int_list(budgets))
    if not grid:
        _fail(EXIT_VALIDATION, "nothing to simulate: no estimators selected")
    try:
        records = simulate_explainer_runs(model, xs, grid, runs_per_config=reruns, seed=seed)
    except ValueError as exc:
        _fail(EXIT_VALIDATION, str(exc))
    _write_corpus(records, out_path)


@simulate.command()
@click.option("--preset", type=click.Choice(["magnitude-spread", "cancellation"]), default=None)
@click.option("--values", default=None, help="Comma list of floats to sum.")
@click.option("--n", "n_values", type=int, default=10_000, show_default=True, help="Preset size.")
@click.option("--shuffles", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def reduction(preset, values, n_values, shuffles, seed):
    """Demonstrate non-associative float32 summation across orderings."""
    if values is not None:
        data = [float(v) for v in values.replace(" ", "").split(",") if v]
    elif preset == "cancellation":
        data = [1e8, 1.0, -1e8]
    else:
        data = magnitude_spread_values(n=n_values, seed=seed)
    try:
        spread = reduction_order_spread(data, n_shuffles=shuffles, seed=seed)
    except ValueError as exc:
        _fail(EXIT_VALIDATION, str(exc))
    summary = {
        "n_values": len(data),
        "n_shuffles": shuffles,
        "distinct_sums_single": spread.distinct_sums_single,
        "max_abs_diff": spread.max_abs_diff,
        "reference": spread.reference,
    }
    sys.stdout.buffer.write(canonical_serialize(summary) + b"\n")


@simulate.command()
@click.option("--instances", type=int, default=100, show_default=True)
@click.option("--dim", type=int, default=16, show_default=True)
@click.option("--noise-scale", type=float, default=0.05, show_default=True)
@click.option("--runs", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--out", "out_path", type=click.Path(dir_okay=False), default=None)
def embedding(instances, dim, noise_scale, runs, seed, out_path):
    """Emit seeded noisy embedding run records."""
    try:
        records = simulate_embedding_runs(instances, dim, noise_scale, runs, seed)
    except ValueError as exc:
        _fail(EXIT_VALIDATION, str(exc))
    _write_corpus(records, out_path)


@main.group()
def ledger():
    """Tamper-evident hash-chained report storage."""


@ledger.command(name="append")
@click.argument("ledger_path", type=click.Path(dir_okay=False))
@click.argument("payload_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--timestamp-ms", type=int, default=None, help="Override the wall-clock timestamp.")
def ledger_append_cmd(ledger_path, payload_path, timestamp_ms):
    """Append a JSON payload file to the ledger."""
    try:
        with open(payload_path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(EXIT_VALIDATION, f"cannot read payload: {exc}")
    try:
        entry = ledger_append(ledger_path, payload, timestamp_ms=timestamp_ms)
    except LockHeldError as exc:
        _fail(EXIT_LOCK, str(exc))
    except LedgerError as exc:
        _fail(EXIT_GATE, str(exc))
    click.echo(f"appended entry {entry.index} ({entry.entry_hash})")


@ledger.command(name="verify")
@click.argument("ledger_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--deep", is_flag=True, help="Also re-hash stored payload objects.")
def ledger_verify_cmd(ledger_path, deep):
    """Verify the hash chain; nonzero exit with the first broken index."""
    result = ledger_verify(ledger_path, check_payloads=deep)
    if result.ok:
        click.echo(f"ok ({result.n_entries} entries)")
    else:
        click.echo(f"broken at index {result.first_broken_index}: {result.detail}", err=True)
        sys.exit(EXIT_GATE)


if __name__ == "__main__":
    main()
