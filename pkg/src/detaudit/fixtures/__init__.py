"""Bundled sample corpora for pipeline validation without GPUs.

Three JSONL files mirror a cross-configuration generation experiment at
desk scale, plus the frozen metric values they must recompute to:

    cross_tp.jsonl     20 prompts, one run at tp=1 and one at tp=4;
                       17 prompt pairs byte-identical, 3 divergent.
    within_tp.jsonl    10 prompts, 2 identical runs per tp in {1, 4}.
    calibration.jsonl  deterministic-reference traces whose pooled token
                       EU calibrates theta_EU (includes a sparse high-EU
                       tail so the threshold sits above the bulk).
    expected.json      frozen metric values and the accepted TDI band.

Regenerate with scripts/generate_fixtures.py; the frozen values are the
contract that the metric pipeline has not drifted.
"""

from importlib import resources
from pathlib import Path

__all__ = ["fixture_path", "CROSS_TP", "WITHIN_TP", "CALIBRATION", "EXPECTED"]

CROSS_TP = "cross_tp.jsonl"
WITHIN_TP = "within_tp.jsonl"
CALIBRATION = "calibration.jsonl"
EXPECTED = "expected.json"


def fixture_path(name: str) -> Path:
    """Filesystem path of a bundled fixture file."""
    return Path(resources.files(__package__) / "data" / name)
