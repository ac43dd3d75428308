"""Synthetic nondeterminism generators.

Three desk-scale mechanisms: stochastic feature attribution (exact
power-set Shapley vs a seeded permutation-sampling estimator), order
sensitivity of single-precision summation, and seeded embedding noise.
Every generator is a deterministic function of its seed: the RNG is
numpy's PCG64 seeded through SeedSequence with explicit spawn keys
(published algorithms with fixed constants), so identical seeds give
byte-identical corpora.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .records import AttributionRanking, EmbeddingVector, RunRecord

__all__ = [
    "ToyModel",
    "ShapleyEstimate",
    "ExplainerConfig",
    "ReductionSpread",
    "shapley_exact",
    "shapley_mc",
    "simulate_explainer_runs",
    "reduction_order_spread",
    "magnitude_spread_values",
    "simulate_embedding_runs",
    "random_model",
    "random_instances",
]

MAX_EXACT_FEATURES = 20  # power-set enumeration is 2^M


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=stream)))


@dataclass
class ToyModel:
    """Additive toy model with optional sparse pairwise interactions.

    f(z) = sum_j w_j z_j + sum_(j,l) w_jl z_j z_l. Coalition values plug in
    x for in-coalition features and the baseline b elsewhere.
    """

    kind: str  # "linear" | "interaction"
    weights: list[float]
    baseline: list[float]
    pairs: list[tuple[int, int, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("linear", "interaction"):
            raise ValueError(f"model kind must be 'linear' or 'interaction', got {self.kind!r}")
        if len(self.baseline) != len(self.weights):
            raise ValueError("baseline and weights must have equal length")
        if self.kind == "linear" and self.pairs:
            raise ValueError("linear model cannot carry pairwise terms")
        m = len(self.weights)
        for j, l, _ in self.pairs:
            if not (0 <= j < m and 0 <= l < m and j != l):
                raise ValueError(f"bad interaction pair ({j},{l}) for M={m}")

    @property
    def n_features(self) -> int:
        return len(self.weights)

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        """Model value for each row of z, accumulated in a fixed order."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        out = np.zeros(z.shape[0])
        for j, w in enumerate(self.weights):
            out += w * z[:, j]
        for j, l, w in self.pairs:
            out += w * z[:, j] * z[:, l]
        return out

    def evaluate_one(self, z) -> float:
        return float(self.evaluate(np.asarray(z, dtype=np.float64))[0])


@dataclass
class ShapleyEstimate:
    phi: list[float]
    estimator: str  # "exact" | "permutation_mc"
    n_samples: int
    seed: int


def _check_inputs(model: ToyModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.n_features,):
        raise ValueError(f"x must have shape ({model.n_features},), got {x.shape}")
    return x


def shapley_exact(model: ToyModel, x) -> ShapleyEstimate:
    """Exact Shapley values by full power-set enumeration.

    phi_j = sum over coalitions S not containing j of
    |S|! (M-|S|-1)! / M! * (f(S + j) - f(S)). Bit-identical across calls.
    """
    x = _check_inputs(model, x)
    m = model.n_features
    if m > MAX_EXACT_FEATURES:
        raise ValueError(f"exact enumeration capped at M={MAX_EXACT_FEATURES}, got M={m}")
    b = np.asarray(model.baseline, dtype=np.float64)
    n_coalitions = 1 << m
    s_all = np.arange(n_coalitions, dtype=np.uint32)

    # v[s]: model value with features in s at x, others at baseline.
    values = np.zeros(n_coalitions)
    member = [(s_all >> j) & 1 == 1 for j in range(m)]
    for j, w in enumerate(model.weights):
        values += np.where(member[j], w * x[j], w * b[j])
    for j, l, w in model.pairs:
        ej = np.where(member[j], x[j], b[j])
        el = np.where(member[l], x[l], b[l])
        values += w * ej * el

    size = np.bitwise_count(s_all).astype(np.int64)
    fact = [math.factorial(i) for i in range(m + 1)]
    weight_by_size = np.array(
        [fact[s] * fact[m - s - 1] / fact[m] for s in range(m)], dtype=np.float64
    )

    phi = []
    for j in range(m):
        without = s_all[~member[j]]
        with_j = without + (np.uint32(1) << np.uint32(j))
        marginals = values[with_j] - values[without]
        phi.append(float(np.sum(weight_by_size[size[without]] * marginals)))
    return ShapleyEstimate(phi=phi, estimator="exact", n_samples=0, seed=0)


def shapley_mc(model: ToyModel, x, n_samples: int, seed: int) -> ShapleyEstimate:
    """Permutation-sampling Monte-Carlo Shapley estimate.

    Each of n_samples random feature orderings contributes one marginal
    contribution per feature: the marginal of j given the set of features
    ordered before it. For this model family the marginal is
    (x_j - b_j) * (w_j + sum_l w_jl * e_l) with e_l = x_l when l precedes j
    and b_l otherwise, so the estimate reduces to precedence counts. The
    estimator is unbiased with per-coordinate variance O(1/n_samples) and
    is deterministic given (seed, n_samples).
    """
    x = _check_inputs(model, x)
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    b = np.asarray(model.baseline, dtype=np.float64)
    m = model.n_features
    # Row r of keys defines the r-th sampled ordering: j precedes l iff
    # keys[r, j] < keys[r, l].
    keys = _rng(seed, 0).random((n_samples, m))
    bracket = [model.weights[j] for j in range(m)]  # w_j + sum of expected pair terms
    for j, l, w in model.pairs:
        frac_l_first = np.count_nonzero(keys[:, l] < keys[:, j]) / n_samples
        frac_j_first = 1.0 - frac_l_first
        bracket[j] += w * (b[l] + frac_l_first * (x[l] - b[l]))
        bracket[l] += w * (b[j] + frac_j_first * (x[j] - b[j]))
    phi = [float((x[j] - b[j]) * bracket[j]) for j in range(m)]
    return ShapleyEstimate(phi=phi, estimator="permutation_mc", n_samples=n_samples, seed=seed)


@dataclass
class ExplainerConfig:
    estimator: str  # "exact" | "permutation_mc"
    n_samples: int = 0

    def label(self) -> dict[str, str]:
        return {"estimator": self.estimator, "n_samples": str(self.n_samples)}


def _ranking_from(phi: list[float]) -> AttributionRanking:
    width = max(2, len(str(len(phi) - 1)))
    return AttributionRanking(
        features=[(f"f{j:0{width}d}", val) for j, val in enumerate(phi)]
    )


def simulate_explainer_runs(
    model: ToyModel,
    instances: list,
    grid: list[ExplainerConfig],
    runs_per_config: int,
    seed: int,
) -> list[RunRecord]:
    """Emit ranking run records for every (instance, config, rerun) cell.

    Rerun seeds derive from (seed, instance index, config index, rerun
    index) so any cell is reproducible in isolation. Exact-estimator cells
    are computed once per instance and repeated: reruns are identical by
    construction, which is the deterministic reference the rank metrics
    compare stochastic estimators against.
    """
    if runs_per_config < 1:
        raise ValueError("runs_per_config must be >= 1")
    records = []
    for i, x in enumerate(instances):
        instance_id = f"i{i:04d}"
        exact_cache: Optional[ShapleyEstimate] = None
        for c, cfg in enumerate(grid):
            for r in range(runs_per_config):
                if cfg.estimator == "exact":
                    if exact_cache is None:
                        exact_cache = shapley_exact(model, x)
                    estimate = exact_cache
                elif cfg.estimator == "permutation_mc":
                    child_seed = int(
                        np.random.SeedSequence(seed, spawn_key=(i, c, r)).generate_state(1)[0]
                    )
                    estimate = shapley_mc(model, x, cfg.n_samples, child_seed)
                else:
                    raise ValueError(f"unknown estimator {cfg.estimator!r}")
                config = dict(cfg.label())
                config["rerun_seed"] = str(r)
                records.append(
                    RunRecord(
                        run_id=f"{cfg.estimator}-n{cfg.n_samples}-r{r:03d}",
                        instance_id=instance_id,
                        config=config,
                        payload=_ranking_from(estimate.phi),
                    )
                )
    return records


@dataclass
class ReductionSpread:
    distinct_sums_single: int
    max_abs_diff: float
    reference: float
    sums: list[float]


def reduction_order_spread(values: list[float], n_shuffles: int, seed: int) -> ReductionSpread:
    """Sum the same values in shuffled orders with float32 accumulation.

    Each shuffle is summed strictly sequentially in single precision (the
    order is the experiment); the reference is the exactly-rounded
    double-precision compensated sum, which is order-invariant and is
    recomputed per shuffle as a control.
    """
    if n_shuffles < 2:
        raise ValueError("n_shuffles must be >= 2")
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("values must be a non-empty 1-D list")
    rng = _rng(seed, 0)
    sums = []
    references = set()
    for _ in range(n_shuffles):
        perm = rng.permutation(arr.size)
        shuffled = arr[perm]
        single = np.add.accumulate(shuffled.astype(np.float32), dtype=np.float32)[-1]
        sums.append(float(single))
        references.add(math.fsum(shuffled))
    if len(references) != 1:
        raise AssertionError("compensated double-precision reference varied across orders")
    distinct = len(set(sums))
    return ReductionSpread(
        distinct_sums_single=distinct,
        max_abs_diff=max(sums) - min(sums),
        reference=references.pop(),
        sums=sums,
    )


def magnitude_spread_values(n: int = 10_000, seed: int = 0) -> list[float]:
    """Log-uniform magnitudes in [1e-8, 1e8], the stock hard case."""
    rng = _rng(seed, 1)
    exponents = rng.uniform(-8.0, 8.0, size=n)
    return [float(v) for v in np.power(10.0, exponents)]


def simulate_embedding_runs(
    n_instances: int,
    dim: int,
    noise_scale: float,
    n_runs: int,
    seed: int,
) -> list[RunRecord]:
    """Per instance: a fixed base direction plus per-run isotropic noise.

    Vectors are L2-normalized; the label is the sign of the first
    coordinate, so the downstream flip rate responds to the noise scale.
    noise_scale 0 reproduces the base direction bit-identically every run.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    if n_instances < 1 or n_runs < 1:
        raise ValueError("n_instances and n_runs must be >= 1")
    records = []
    for i in range(n_instances):
        base = _rng(seed, 2, i).normal(size=dim)
        for r in range(n_runs):
            noise = _rng(seed, 3, i, r).normal(size=dim) * noise_scale
            v = base + noise
            v = v / np.sqrt(np.sum(v * v))
            label = "pos" if v[0] >= 0 else "neg"
            records.append(
                RunRecord(
                    run_id=f"r{r:03d}",
                    instance_id=f"e{i:04d}",
                    config={"generator": "embedding-noise", "noise_scale": repr(float(noise_scale))},
                    payload=EmbeddingVector(values=[float(c) for c in v], label=label),
                )
            )
    return records


def random_model(
    m: int,
    kind: str = "interaction",
    n_pairs: Optional[int] = None,
    pair_scale: float = 1.0,
    seed: int = 0,
) -> ToyModel:
    """Seeded toy model with standard-normal weights and random sparse pairs."""
    rng = _rng(seed, 4)
    weights = [float(w) for w in rng.normal(size=m)]
    baseline = [0.0] * m
    pairs: list[tuple[int, int, float]] = []
    if kind == "interaction":
        if n_pairs is None:
            n_pairs = m
        seen = set()
        while len(pairs) < n_pairs:
            j, l = (int(v) for v in rng.integers(0, m, size=2))
            if j == l or (min(j, l), max(j, l)) in seen:
                continue
            seen.add((min(j, l), max(j, l)))
            pairs.append((min(j, l), max(j, l), float(rng.normal() * pair_scale)))
    return ToyModel(kind=kind, weights=weights, baseline=baseline, pairs=pairs)


def random_instances(m: int, count: int, seed: int = 0) -> list[list[float]]:
    rng = _rng(seed, 5)
    return [[float(v) for v in rng.normal(size=m)] for _ in range(count)]
