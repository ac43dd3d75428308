"""detaudit: determinism audit toolkit for multi-run model outputs.

Ingests JSONL run records, computes layered reproducibility metrics (rank,
embedding, sequence, logit, prediction), ships synthetic nondeterminism
simulators, and stores reports in a tamper-evident hash-chained ledger.
"""

__version__ = "0.1.0"

from .canonical import CanonicalError, canonical_serialize, payload_digest, sha256_hex
from .records import (
    ActionTrace,
    AttributionRanking,
    EmbeddingVector,
    GenerationOutput,
    IngestError,
    IngestResult,
    LogitTrace,
    RunRecord,
    RunSet,
    ScalarPrediction,
    ValidationError,
    group,
    ingest,
    ingest_lines,
    parse_record,
    record_to_dict,
    serialize_corpus,
)
from .rank import jaccard_at_k, rank_span, rbo, stability_summary
from .embedding import cosine_similarity, d_cos, ddr, flip_rate
from .sequence import (
    entity_jaccard,
    exact_match,
    levenshtein,
    match_score,
    psd,
    trajectory_edit,
)
from .logit import au_eu, calibrate_theta, digamma, tdi
from .simulate import (
    ExplainerConfig,
    ToyModel,
    magnitude_spread_values,
    reduction_order_spread,
    shapley_exact,
    shapley_mc,
    simulate_embedding_runs,
    simulate_explainer_runs,
)
from .ledger import GENESIS_HASH, LedgerEntry, LedgerError, LockHeldError, append, verify
from .report import AuditParameters, EmptyMetricSet, build_report, render_markdown

__all__ = [
    "__version__",
    "CanonicalError",
    "canonical_serialize",
    "payload_digest",
    "sha256_hex",
    "ActionTrace",
    "AttributionRanking",
    "EmbeddingVector",
    "GenerationOutput",
    "IngestError",
    "IngestResult",
    "LogitTrace",
    "RunRecord",
    "RunSet",
    "ScalarPrediction",
    "ValidationError",
    "group",
    "ingest",
    "ingest_lines",
    "parse_record",
    "record_to_dict",
    "serialize_corpus",
    "jaccard_at_k",
    "rank_span",
    "rbo",
    "stability_summary",
    "cosine_similarity",
    "d_cos",
    "ddr",
    "flip_rate",
    "entity_jaccard",
    "exact_match",
    "levenshtein",
    "match_score",
    "psd",
    "trajectory_edit",
    "au_eu",
    "calibrate_theta",
    "digamma",
    "tdi",
    "ExplainerConfig",
    "ToyModel",
    "magnitude_spread_values",
    "reduction_order_spread",
    "shapley_exact",
    "shapley_mc",
    "simulate_embedding_runs",
    "simulate_explainer_runs",
    "GENESIS_HASH",
    "LedgerEntry",
    "LedgerError",
    "LockHeldError",
    "append",
    "verify",
    "AuditParameters",
    "EmptyMetricSet",
    "build_report",
    "render_markdown",
]
