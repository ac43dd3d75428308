"""Logit-level determinism: Dirichlet uncertainty decomposition and the
token determinism index.

Top-K raw scores are treated as parameters of a Dirichlet distribution.
The aleatoric component (AU) is the expected Shannon entropy of a
categorical distribution drawn from it, capturing spread among candidate
tokens; the epistemic component (EU) is inverse evidence strength. A token
generated with strong evidence has low EU regardless of how many valid
continuations exist, which is what distinguishes legitimate variability
from unreliable inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .records import LogitTrace

__all__ = [
    "TokenUncertainty",
    "TdiResult",
    "digamma",
    "alpha_from_logits",
    "au_eu",
    "tdi",
    "calibrate_theta",
    "midpoint_quantile",
    "ALPHA_SHIFT_EPS",
]

# Raw top-K logits may be non-positive while Dirichlet parameters must be
# strictly positive: shift by the window minimum plus this epsilon,
# preserving within-window differences.
ALPHA_SHIFT_EPS = 1.0

# Asymptotic-series coefficients: B_2k / (2k) for 2k = 2, 4, ..., 12.
_ASYMPTOTIC = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
)

_RECURRENCE_THRESHOLD = 10.0


def digamma(x: float) -> float:
    """Digamma psi(x) for x > 0, accurate to <= 1e-10 absolute on [1e-3, 1e6].

    Uses the upward recurrence psi(x+1) = psi(x) + 1/x to push the argument
    past 10, then the Bernoulli asymptotic series.
    """
    if not (isinstance(x, (int, float)) and not isinstance(x, bool)):
        raise ValueError(f"digamma argument must be a real number, got {type(x).__name__}")
    x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise ValueError(f"digamma requires x > 0, got {x!r}")
    acc = 0.0
    while x < _RECURRENCE_THRESHOLD:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for coeff in _ASYMPTOTIC:
        series += coeff * power
        power *= inv2
    return acc + math.log(x) - 0.5 / x - series


@dataclass
class TokenUncertainty:
    au: float
    eu: float
    alpha: list[float]
    alpha0: float


def au_eu(alpha: Sequence[float]) -> TokenUncertainty:
    """Aleatoric and epistemic uncertainty of one token's Dirichlet parameters.

    AU = -sum_k (a_k/a_0) * (psi(a_k + 1) - psi(a_0 + 1))
    EU = K / sum_k (a_k + 1)
    """
    k = len(alpha)
    if k < 2:
        raise ValueError(f"need K >= 2 Dirichlet parameters, got {k}")
    alpha = [float(a) for a in alpha]
    for a in alpha:
        if not math.isfinite(a) or a <= 0.0:
            raise ValueError(f"Dirichlet parameters must be positive and finite, got {a!r}")
    alpha0 = math.fsum(alpha)
    psi_a0 = digamma(alpha0 + 1.0)
    au = -math.fsum((a / alpha0) * (digamma(a + 1.0) - psi_a0) for a in alpha)
    eu = k / (alpha0 + k)
    return TokenUncertainty(au=au, eu=eu, alpha=alpha, alpha0=alpha0)


def alpha_from_logits(logits: Sequence[float], eps: float = ALPHA_SHIFT_EPS) -> list[float]:
    """Map a top-K logit window to strictly positive Dirichlet parameters."""
    lo = min(logits)
    return [float(l) - lo + eps for l in logits]


@dataclass
class TdiResult:
    tdi: float
    theta_eu: float
    per_token_eu: list[float]
    flagged_positions: list[int]  # 0-based token indices with EU >= theta


def _trace_eu(trace: LogitTrace) -> list[float]:
    out = []
    for step in trace.steps:
        alpha = alpha_from_logits([logit for _, logit in step])
        k = len(alpha)
        out.append(k / (math.fsum(alpha) + k))
    return out


def tdi(trace: LogitTrace, theta_eu: float) -> TdiResult:
    """Fraction of tokens generated with epistemic evidence below theta."""
    if not theta_eu > 0.0:
        raise ValueError(f"theta_eu must be > 0, got {theta_eu}")
    eus = _trace_eu(trace)
    flagged = [t for t, eu in enumerate(eus) if eu >= theta_eu]
    value = (len(eus) - len(flagged)) / len(eus)
    return TdiResult(tdi=value, theta_eu=theta_eu, per_token_eu=eus, flagged_positions=flagged)


def midpoint_quantile(values: Sequence[float], quantile: float) -> float:
    """Empirical quantile with midpoint interpolation.

    For n sorted values and h = n * q: (x_k + x_{k+1}) / 2 when h lands on
    an integer k, else x_ceil(h). Deterministic given the values.
    """
    if not 0.0 < quantile < 1.0:
        raise ValueError(f"quantile must be in (0,1), got {quantile}")
    if not values:
        raise ValueError("empty pool; quantile undefined")
    pool = sorted(values)
    n = len(pool)
    h = n * quantile
    k = round(h)
    if abs(h - k) < 1e-9 and 1 <= k < n:
        return (pool[k - 1] + pool[k]) / 2.0
    idx = min(max(math.ceil(h), 1), n)
    return pool[idx - 1]


def calibrate_theta(within_config_traces: list[LogitTrace], quantile: float = 0.99) -> float:
    """Threshold from the pooled per-token EU of deterministic-reference runs.

    Takes the given quantile of the pooled distribution with midpoint
    interpolation. The reference population should come from within-config
    runs, which are the natural deterministic baseline.
    """
    pool: list[float] = []
    for trace in within_config_traces:
        pool.extend(_trace_eu(trace))
    if not pool:
        raise ValueError("empty EU pool; nothing to calibrate from")
    return midpoint_quantile(pool, quantile)
