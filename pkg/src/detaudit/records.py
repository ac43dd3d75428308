"""Run-record data model, JSONL ingestion, and grouping into comparable run sets.

One RunRecord is one execution's output for one instance under one labeled
configuration. The JSONL wire format (one record per line, UTF-8) is the
external contract for every producer, including simulators and adapters:

    {"run_id": "...", "instance_id": "...", "config": {"seed": "0", ...},
     "payload": {"kind": "ranking" | "embedding" | "generation" | "trace" | "scalar", ...},
     "created_at": 1700000000000}   # optional, ms since epoch

Payload bodies by kind:
    ranking    features: [[feature_id, attribution], ...]
    embedding  values: [float, ...], label?: str, score?: float in [0,1]
    generation text: str, entities?: [str], embedding?: [float], logits?: {"steps": [[[token_id, logit], ...], ...]}
    trace      actions: [str, ...]
    scalar     score: float, label: str
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from .canonical import canonical_serialize

__all__ = [
    "ValidationError",
    "IngestError",
    "AttributionRanking",
    "EmbeddingVector",
    "LogitTrace",
    "GenerationOutput",
    "ActionTrace",
    "ScalarPrediction",
    "Payload",
    "RunRecord",
    "RunSet",
    "IngestResult",
    "parse_record",
    "record_to_dict",
    "serialize_corpus",
    "ingest",
    "ingest_lines",
    "group",
]


class ValidationError(ValueError):
    """A record or payload violates the schema."""


class IngestError(ValueError):
    """A JSONL corpus cannot be ingested in strict mode."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message)
        self.line = line


def _require_finite(x: Any, what: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ValidationError(f"{what} must be a number, got {type(x).__name__}")
    x = float(x)
    if not math.isfinite(x):
        raise ValidationError(f"{what} must be finite, got {x!r}")
    return x


@dataclass
class AttributionRanking:
    """Ordered feature attributions, sorted by (|attribution| desc, feature_id asc).

    Ingested order is not trusted; the canonical sort is reapplied so that
    ties break identically everywhere rank metrics compare rank sets.
    """

    features: list[tuple[str, float]]

    kind = "ranking"

    def __post_init__(self):
        cleaned = []
        seen = set()
        for item in self.features:
            fid, attr = item[0], item[1]
            if not isinstance(fid, str) or not fid:
                raise ValidationError(f"feature_id must be a non-empty string, got {fid!r}")
            if fid in seen:
                raise ValidationError(f"duplicate feature_id in ranking: {fid!r}")
            seen.add(fid)
            cleaned.append((fid, _require_finite(attr, f"attribution[{fid}]")))
        cleaned.sort(key=lambda fa: (-abs(fa[1]), fa[0]))
        self.features = cleaned

    def feature_ids(self) -> list[str]:
        return [fid for fid, _ in self.features]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "features": [[fid, attr] for fid, attr in self.features]}


@dataclass
class EmbeddingVector:
    values: list[float]
    label: Optional[str] = None
    score: Optional[float] = None

    kind = "embedding"

    def __post_init__(self):
        if not self.values:
            raise ValidationError("embedding must have dimension >= 1")
        self.values = [_require_finite(v, "embedding value") for v in self.values]
        if self.label is not None and not isinstance(self.label, str):
            raise ValidationError("embedding label must be a string")
        if self.score is not None:
            self.score = _require_finite(self.score, "embedding score")
            if not 0.0 <= self.score <= 1.0:
                raise ValidationError(f"embedding score must be in [0,1], got {self.score}")

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "values": list(self.values)}
        if self.label is not None:
            out["label"] = self.label
        if self.score is not None:
            out["score"] = self.score
        return out


@dataclass
class LogitTrace:
    """Per-token top-K raw scores; every step has the same K >= 2."""

    steps: list[list[tuple[str, float]]]

    def __post_init__(self):
        if not self.steps:
            raise ValidationError("logit trace must have at least one step")
        k = None
        normalized = []
        for t, step in enumerate(self.steps):
            entries = []
            for item in step:
                tok, logit = item[0], item[1]
                if not isinstance(tok, str):
                    raise ValidationError(f"token_id at step {t} must be a string")
                entries.append((tok, _require_finite(logit, f"logit at step {t}")))
            if len(entries) < 2:
                raise ValidationError(f"step {t} has K={len(entries)}, need K >= 2")
            if k is None:
                k = len(entries)
            elif len(entries) != k:
                raise ValidationError(f"step {t} has K={len(entries)}, expected K={k}")
            entries.sort(key=lambda e: (-e[1], e[0]))
            normalized.append(entries)
        self.steps = normalized

    @property
    def k(self) -> int:
        return len(self.steps[0])

    def to_dict(self) -> dict:
        return {"steps": [[[tok, logit] for tok, logit in step] for step in self.steps]}


@dataclass
class GenerationOutput:
    text: str
    entities: list[str] = field(default_factory=list)
    embedding: Optional[list[float]] = None
    logits: Optional[LogitTrace] = None

    kind = "generation"

    def __post_init__(self):
        if not isinstance(self.text, str):
            raise ValidationError("generation text must be a string")
        for e in self.entities:
            if not isinstance(e, str):
                raise ValidationError("entities must be strings")
        if self.embedding is not None:
            if not self.embedding:
                raise ValidationError("generation embedding must have dimension >= 1")
            self.embedding = [_require_finite(v, "generation embedding value") for v in self.embedding]

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "text": self.text, "entities": list(self.entities)}
        if self.embedding is not None:
            out["embedding"] = list(self.embedding)
        if self.logits is not None:
            out["logits"] = self.logits.to_dict()
        return out


@dataclass
class ActionTrace:
    actions: list[str]

    kind = "trace"

    def __post_init__(self):
        for a in self.actions:
            if not isinstance(a, str):
                raise ValidationError("actions must be strings")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "actions": list(self.actions)}


@dataclass
class ScalarPrediction:
    score: float
    label: str

    kind = "scalar"

    def __post_init__(self):
        self.score = _require_finite(self.score, "scalar score")
        if not isinstance(self.label, str):
            raise ValidationError("scalar label must be a string")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "score": self.score, "label": self.label}


Payload = Union[AttributionRanking, EmbeddingVector, GenerationOutput, ActionTrace, ScalarPrediction]

_PAYLOAD_KINDS = {
    "ranking": AttributionRanking,
    "embedding": EmbeddingVector,
    "generation": GenerationOutput,
    "trace": ActionTrace,
    "scalar": ScalarPrediction,
}


@dataclass
class RunRecord:
    run_id: str
    instance_id: str
    config: dict[str, str]
    payload: Payload
    created_at: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.run_id, str) or not self.run_id:
            raise ValidationError("run_id must be a non-empty string")
        if not isinstance(self.instance_id, str) or not self.instance_id:
            raise ValidationError("instance_id must be a non-empty string")
        if not isinstance(self.config, dict):
            raise ValidationError("config must be a map of string labels")
        for key, val in self.config.items():
            if not isinstance(key, str) or not key or any(c.isspace() for c in key):
                raise ValidationError(f"config key must be non-empty without whitespace, got {key!r}")
            if not isinstance(val, str):
                raise ValidationError(f"config value for {key!r} must be a string")
        if self.created_at is not None:
            if isinstance(self.created_at, bool) or not isinstance(self.created_at, int):
                raise ValidationError("created_at must be an integer (ms since epoch)")


def _parse_payload(obj: Any) -> Payload:
    if not isinstance(obj, dict):
        raise ValidationError("payload must be an object")
    kind = obj.get("kind")
    if kind not in _PAYLOAD_KINDS:
        raise ValidationError(f"unknown payload kind: {kind!r}")
    body = {k: v for k, v in obj.items() if k != "kind"}

    if kind == "ranking":
        allowed = {"features"}
    elif kind == "embedding":
        allowed = {"values", "label", "score"}
    elif kind == "generation":
        allowed = {"text", "entities", "embedding", "logits"}
    elif kind == "trace":
        allowed = {"actions"}
    else:
        allowed = {"score", "label"}
    unknown = set(body) - allowed
    if unknown:
        raise ValidationError(f"unknown payload field(s) for kind {kind!r}: {sorted(unknown)}")

    try:
        if kind == "ranking":
            return AttributionRanking(features=body["features"])
        if kind == "embedding":
            return EmbeddingVector(values=body["values"], label=body.get("label"), score=body.get("score"))
        if kind == "generation":
            logits = body.get("logits")
            trace = LogitTrace(steps=logits["steps"]) if logits is not None else None
            return GenerationOutput(
                text=body["text"],
                entities=body.get("entities", []),
                embedding=body.get("embedding"),
                logits=trace,
            )
        if kind == "trace":
            return ActionTrace(actions=body["actions"])
        return ScalarPrediction(score=body["score"], label=body["label"])
    except KeyError as exc:
        raise ValidationError(f"payload kind {kind!r} missing required field {exc.args[0]!r}") from None
    except TypeError as exc:
        raise ValidationError(f"malformed payload for kind {kind!r}: {exc}") from None


_RECORD_FIELDS = {"run_id", "instance_id", "config", "payload", "created_at"}


def parse_record(obj: Any) -> RunRecord:
    """Validate one decoded JSON object into a RunRecord."""
    if not isinstance(obj, dict):
        raise ValidationError("record must be a JSON object")
    unknown = set(obj) - _RECORD_FIELDS
    if unknown:
        raise ValidationError(f"unknown record field(s): {sorted(unknown)}")
    missing = {"run_id", "instance_id", "config", "payload"} - set(obj)
    if missing:
        raise ValidationError(f"missing record field(s): {sorted(missing)}")
    return RunRecord(
        run_id=obj["run_id"],
        instance_id=obj["instance_id"],
        config=obj["config"],
        payload=_parse_payload(obj["payload"]),
        created_at=obj.get("created_at"),
    )


def record_to_dict(record: RunRecord) -> dict:
    out: dict[str, Any] = {
        "run_id": record.run_id,
        "instance_id": record.instance_id,
        "config": dict(record.config),
        "payload": record.payload.to_dict(),
    }
    if record.created_at is not None:
        out["created_at"] = record.created_at
    return out


def serialize_corpus(records: list[RunRecord]) -> bytes:
    """Canonical JSONL bytes for a corpus, one record per line."""
    lines = [canonical_serialize(record_to_dict(r)) for r in records]
    return b"\n".join(lines) + (b"\n" if lines else b"")


@dataclass
class IngestResult:
    records: list[RunRecord]
    skipped: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_skipped(self) -> int:
        return len(self.skipped)


def ingest_lines(lines, schema_mode: str = "strict") -> IngestResult:
    """Ingest an iterable of JSONL lines.

    Strict mode aborts on the first invalid line or duplicate
    (run_id, instance_id); lenient mode skips and counts them.
    """
    if schema_mode not in ("strict", "lenient"):
        raise ValueError(f"schema_mode must be 'strict' or 'lenient', got {schema_mode!r}")
    strict = schema_mode == "strict"
    records: list[RunRecord] = []
    skipped: list[tuple[int, str]] = []
    seen: dict[tuple[str, str], int] = {}

    for lineno, raw in enumerate(lines, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        stripped = raw.strip()
        if not stripped:
            continue
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError as exc:
            msg = f"line {lineno}: malformed JSON ({exc.msg})"
            if strict:
                raise IngestError(msg, line=lineno) from None
            skipped.append((lineno, msg))
            continue
        try:
            record = parse_record(obj)
        except ValidationError as exc:
            msg = f"line {lineno}: {exc}"
            if strict:
                raise IngestError(msg, line=lineno) from None
            skipped.append((lineno, msg))
            continue
        key = (record.run_id, record.instance_id)
        if key in seen:
            msg = (
                f"line {lineno}: duplicate (run_id, instance_id) {key!r}, "
                f"first seen at line {seen[key]}"
            )
            if strict:
                raise IngestError(msg, line=lineno)
            skipped.append((lineno, msg))
            continue
        seen[key] = lineno
        records.append(record)

    return IngestResult(records=records, skipped=skipped)


def ingest(path: Union[str, Path], schema_mode: str = "strict") -> IngestResult:
    """Ingest a JSONL run-record file (one JSON object per line, UTF-8)."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        return ingest_lines(fh, schema_mode=schema_mode)


@dataclass
class RunSet:
    """All records for one (instance, config-group), sorted by run_id."""

    instance_id: str
    group_key: str
    records: list[RunRecord]

    @property
    def n_runs(self) -> int:
        return len(self.records)

    def payloads(self) -> list[Payload]:
        return [r.payload for r in self.records]


def group_key_string(config: dict[str, str], fixed_keys: list[str]) -> str:
    """Canonical group-key string for the config subset held fixed."""
    return ",".join(f"{k}={config[k]}" for k in sorted(fixed_keys))


def group(records: list[RunRecord], fixed_keys: list[str]) -> list[RunSet]:
    """Partition records into RunSets keyed by (instance_id, fixed config values).

    Grouping with all config keys fixed yields within-config sets; omitting
    a key (e.g. tp_size) pools runs across that key's values. Every record
    lands in exactly one set. Raises ValidationError if a record is missing
    a fixed key or a prospective set mixes payload variants.
    """
    fixed = sorted(set(fixed_keys))
    buckets: dict[tuple[str, str], list[RunRecord]] = {}
    for rec in records:
        for key in fixed:
            if key not in rec.config:
                raise ValidationError(
                    f"record {rec.run_id!r}/{rec.instance_id!r} missing config key {key!r}"
                )
        gk = group_key_string(rec.config, fixed)
        buckets.setdefault((rec.instance_id, gk), []).append(rec)

    sets = []
    for (instance_id, gk) in sorted(buckets):
        members = sorted(buckets[(instance_id, gk)], key=lambda r: r.run_id)
        kinds = {type(r.payload).kind for r in members}
        if len(kinds) > 1:
            raise ValidationError(
                f"run set ({instance_id!r}, {gk!r}) mixes payload variants: {sorted(kinds)}"
            )
        sets.append(RunSet(instance_id=instance_id, group_key=gk, records=members))
    return sets
