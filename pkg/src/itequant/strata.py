"""Quantile inference under stratified randomization, plus matched-pair
sensitivity analysis.

The statistic is a sum of within-stratum rank-score statistics, so its
randomization distribution is a convolution of independent per-stratum
subset-sum distributions, and the worst-case minimization over effect
vectors separates by stratum: choosing how many treated units to sink in
each stratum is a multiple-choice knapsack over per-stratum option values.
The knapsack is solved exactly by dynamic programming, or conservatively
(never anti-conservatively) by pooled marginal steps on each stratum's
lower convex envelope.

For matched pairs the same machinery extends to biased assignments: under
the odds-ratio model with parameter gamma, the least favorable law lets
every pair independently take its larger score contribution with
probability gamma / (1 + gamma).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .model import (
    ITEProfileCI,
    OutcomeTable,
    QuantileHypothesis,
    validate_table,
)
from .rankstats import (
    EXACT_CAP,
    NullDistribution,
    RankScoreSpec,
    _subset_sums_exact,
    rank_score_stat,
)
from .rng import substream_rng
from .worstcase import _WorstCaseEngine, _checked_ranks

__all__ = [
    "StratifiedAllocation",
    "SensitivityModel",
    "stratified_stat",
    "stratum_option_value",
    "knapsack_min_stat",
    "stratified_null_distribution",
    "pvalue_quantile_stratified",
    "stratified_profile",
    "sensitivity_pvalue_pairs",
    "sensitivity_profile_pairs",
    "amplify_gamma",
]

SpecsLike = Union[RankScoreSpec, Mapping[str, RankScoreSpec]]


@dataclass(frozen=True)
class StratifiedAllocation:
    """How many treated units sink to the bottom ranks in each stratum."""

    labels: tuple
    counts: tuple
    total: int

    def __post_init__(self) -> None:
        if len(self.labels) != len(self.counts):
            raise ValueError("labels and counts must align")
        if sum(self.counts) != self.total:
            raise ValueError("allocation counts must sum to the total")


@dataclass(frozen=True)
class SensitivityModel:
    """Maximum within-stratum odds ratio of assignment probabilities."""

    gamma: float

    def __post_init__(self) -> None:
        if not (self.gamma >= 1.0):
            raise ValueError("gamma must be at least 1")

    @property
    def worst_prob(self) -> float:
        return self.gamma / (1.0 + self.gamma)


def _spec_for(specs: SpecsLike, label) -> RankScoreSpec:
    if isinstance(specs, RankScoreSpec):
        return specs
    try:
        return specs[label]
    except KeyError:
        raise ValueError(f"no statistic configured for stratum {label!r}") from None


def _subtable(table: OutcomeTable, label) -> OutcomeTable:
    idx = table.stratum_indices(label)
    return OutcomeTable(
        ids=tuple(table.ids[i] for i in idx),
        arms=table.arms[idx],
        outcomes=table.outcomes[idx],
        strata=None,
    )


class _StratifiedEngine:
    """Per-stratum worst-case engines plus shared bookkeeping."""

    def __init__(self, table: OutcomeTable, specs: SpecsLike):
        self.table = table
        self.labels = table.stratum_labels()
        self.engines = {}
        self.n1s = {}
        for label in self.labels:
            sub = _subtable(table, label)
            self.engines[label] = _WorstCaseEngine(sub, _spec_for(specs, label))
            self.n1s[label] = sub.n1
        self.n = table.n
        self.n1 = sum(self.n1s.values())

    def option_values(self, label, c: float, just_above: bool) -> np.ndarray:
        """Minimal stratum statistic for each sink count b = 0..n1s."""
        eng = self.engines[label]
        return np.array(
            [eng.t_min(b, c, just_above=just_above) for b in range(self.n1s[label] + 1)]
        )

    def candidate_grid(self) -> np.ndarray:
        pieces = []
        for label in self.labels:
            eng = self.engines[label]
            yt = eng.y[eng.is_treated]
            yc = eng.y[~eng.is_treated]
            pieces.append(yt)
            if len(yc) and len(yt):
                pieces.append((yt[:, None] - yc[None, :]).ravel())
        return np.unique(np.concatenate(pieces))


def stratified_stat(
    z: Sequence[int], y: Sequence[float], strata: Sequence, specs: SpecsLike
) -> float:
    """Sum over strata of the within-stratum rank-score statistic."""
    z = np.asarray(z, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64)
    strata = list(strata)
    if not (len(z) == len(y) == len(strata)):
        raise ValueError("z, y, and strata must have equal length")
    seen: list = []
    for s in strata:
        if s not in seen:
            seen.append(s)
    total = 0.0
    for label in seen:
        idx = [i for i, s in enumerate(strata) if s == label]
        total += rank_score_stat(z[idx], y[idx], _spec_for(specs, label))
    return total


def stratum_option_value(
    table: OutcomeTable, label, b: int, c: float, spec: RankScoreSpec
) -> float:
    """Minimal within-stratum statistic with exactly b treated units given
    arbitrarily large effects (sinking them to the lowest ranks) and effect c
    for the rest."""
    sub = _subtable(table, label)
    if not (0 <= b <= sub.n1):
        raise ValueError(f"sink count {b} out of range 0..{sub.n1}")
    return _WorstCaseEngine(sub, spec).t_min(b, c)


def _dp_min(values: list[np.ndarray], total: int) -> tuple[float, tuple]:
    """Exact knapsack minimum of sum_s values[s][b_s] over sum b_s = total.

    Suffix DP then forward reconstruction, so ties resolve to the
    lexicographically smallest allocation (smaller b_s in earlier strata).
    """
    s_count = len(values)
    inf = math.inf
    suffix = [np.full(total + 1, inf) for _ in range(s_count + 1)]
    suffix[s_count][0] = 0.0
    for s in range(s_count - 1, -1, -1):
        vals = values[s]
        for t in range(total + 1):
            best = inf
            for b in range(min(len(vals) - 1, t) + 1):
                cand = vals[b] + suffix[s + 1][t - b]
                if cand < best:
                    best = cand
            suffix[s][t] = best
    if not math.isfinite(suffix[0][total]):
        raise ValueError("infeasible sink total")
    remaining = total
    counts = []
    for s in range(s_count):
        vals = values[s]
        for b in range(min(len(vals) - 1, remaining) + 1):
            if vals[b] + suffix[s + 1][remaining - b] == suffix[s][remaining]:
                counts.append(b)
                remaining -= b
                break
    return float(suffix[0][total]), tuple(counts)


def _lower_envelope_steps(vals: np.ndarray) -> np.ndarray:
    """Unit-step decrements along the lower convex envelope of (b, vals[b]).

    Returns len(vals) - 1 step values, nondecreasing; their prefix sums lie at
    or below vals - vals[0], which is what makes pooled greedy selection a
    lower bound on the exact knapsack minimum.
    """
    m = len(vals) - 1
    if m == 0:
        return np.empty(0)
    hull = [0]
    for b in range(1, m + 1):
        while len(hull) >= 2:
            b1, b2 = hull[-2], hull[-1]
            if (vals[b2] - vals[b1]) * (b - b2) >= (vals[b] - vals[b2]) * (b2 - b1):
                hull.pop()
            else:
                break
        hull.append(b)
    steps = np.empty(m)
    pos = 0
    for b1, b2 in zip(hull, hull[1:]):
        slope = (vals[b2] - vals[b1]) / (b2 - b1)
        steps[pos : pos + (b2 - b1)] = slope
        pos += b2 - b1
    return steps


def _greedy_min(values: list[np.ndarray], total: int) -> tuple[float, tuple]:
    base = sum(float(v[0]) for v in values)
    step_vals = []
    step_src = []
    for s, vals in enumerate(values):
        steps = _lower_envelope_steps(vals)
        step_vals.extend(steps)
        step_src.extend([s] * len(steps))
    if total > len(step_vals):
        raise ValueError("infeasible sink total")
    order = np.argsort(np.asarray(step_vals), kind="stable")[:total]
    counts = [0] * len(values)
    value = base
    for i in order:
        value += step_vals[i]
        counts[step_src[i]] += 1
    return float(value), tuple(counts)


def knapsack_min_stat(
    table: OutcomeTable,
    h: QuantileHypothesis,
    specs: SpecsLike,
    solver: str = "dp",
    _engine: Optional[_StratifiedEngine] = None,
    _just_above: bool = False,
) -> tuple[float, StratifiedAllocation]:
    """Minimum stratified statistic over effect vectors compatible with the
    null "at most N - k effects exceed c", and the minimizing allocation of
    sink counts across strata."""
    if _engine is None:
        validate_table(table, "stratified")
        _engine = _StratifiedEngine(table, specs)
    if not (1 <= h.k <= _engine.n):
        raise ValueError(f"rank k={h.k} out of range 1..{_engine.n}")
    total = min(_engine.n - h.k, _engine.n1)
    values = [
        _engine.option_values(label, h.c, _just_above) for label in _engine.labels
    ]
    if solver == "dp":
        value, counts = _dp_min(values, total)
    elif solver == "greedy":
        value, counts = _greedy_min(values, total)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    alloc = StratifiedAllocation(
        labels=tuple(_engine.labels), counts=counts, total=total
    )
    return value, alloc


def _convolve_weighted(
    parts: list[tuple[np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray]:
    """Convolve (values, weights) pairs: outer sums with multiplied weights,
    collapsing duplicate sums. Exact for integer-valued score sums and counts."""
    values = np.zeros(1)
    weights = np.ones(1)
    for v, w in parts:
        sums = (values[:, None] + v[None, :]).ravel()
        prods = (weights[:, None] * w[None, :]).ravel()
        uniq, inverse = np.unique(sums, return_inverse=True)
        acc = np.zeros(len(uniq))
        np.add.at(acc, inverse, prods)
        values, weights = uniq, acc
    return values, weights


def _exact_product_size(engine: _StratifiedEngine) -> int:
    size = 1
    for label in engine.labels:
        eng = engine.engines[label]
        size *= math.comb(eng.n, eng.n1)
    return size


def stratified_null_distribution(
    table: OutcomeTable,
    specs: SpecsLike,
    mode: str = "auto",
    mc_draws: int = 10_000,
    seed: int = 0,
    _engine: Optional[_StratifiedEngine] = None,
) -> NullDistribution:
    """Randomization distribution of the stratified statistic under
    independent within-stratum complete randomization.

    Distribution-free: within each stratum the statistic is a subset sum of
    the score vector, so no outcome vector is needed. Exact convolution when
    the product of per-stratum assignment counts is at most EXACT_CAP, else
    Monte Carlo with substream seeding.
    """
    if _engine is None:
        validate_table(table, "stratified")
        _engine = _StratifiedEngine(table, specs)
    size = _exact_product_size(_engine)
    if mode == "auto":
        mode = "exact" if size <= EXACT_CAP else "monte_carlo"
    if mode == "exact":
        if size > EXACT_CAP:
            raise ValueError(
                f"exact enumeration infeasible: product of assignment counts "
                f"{size} > {EXACT_CAP}"
            )
        parts = []
        for label in _engine.labels:
            eng = _engine.engines[label]
            sums = _subset_sums_exact(eng.scores, eng.n1)
            uniq, counts = np.unique(sums, return_counts=True)
            parts.append((uniq, counts.astype(np.float64)))
        values, weights = _convolve_weighted(parts)
        return NullDistribution(mode="exact", values=values, total=size, weights=weights)
    if mode != "monte_carlo":
        raise ValueError(f"unknown mode {mode!r}")
    rng = substream_rng(seed, "stratified-null", _engine.n, _engine.n1)
    draws = np.zeros(mc_draws)
    for label in _engine.labels:
        eng = _engine.engines[label]
        u = rng.random((mc_draws, eng.n))
        if eng.n1 > 0:
            chosen = np.argpartition(u, eng.n1 - 1, axis=1)[:, : eng.n1]
            draws += eng.scores[chosen].sum(axis=1)
    return NullDistribution(mode="monte_carlo", values=draws, total=mc_draws)


def pvalue_quantile_stratified(
    table: OutcomeTable,
    h: QuantileHypothesis,
    specs: SpecsLike,
    solver: str = "dp",
    mode: str = "auto",
    mc_draws: int = 10_000,
    seed: int = 0,
) -> float:
    """Worst-case p-value for the composite quantile null under stratified
    randomization. The greedy solver can only lower the minimized statistic,
    so its p-value is at least the dp solver's."""
    validate_table(table, "stratified")
    engine = _StratifiedEngine(table, specs)
    t_min, _ = knapsack_min_stat(table, h, specs, solver=solver, _engine=engine)
    null = stratified_null_distribution(
        table, specs, mode=mode, mc_draws=mc_draws, seed=seed, _engine=engine
    )
    return null.tail(t_min)


def _invert_stratified(
    engine: _StratifiedEngine,
    null: NullDistribution,
    totals: Sequence[int],
    threshold: float,
    candidates: np.ndarray,
    solver: str,
) -> list[float]:
    """Inversion limits for the monotone family of sink totals (nonincreasing
    totals give nondecreasing limits; warm-started binary searches)."""

    def q(total: int, c: float) -> float:
        values = [engine.option_values(label, c, True) for label in engine.labels]
        if solver == "dp":
            value, _ = _dp_min(values, total)
        else:
            value, _ = _greedy_min(values, total)
        return null.tail(value)

    limits: list[float] = []
    lo_idx = 0
    check_below = True
    for total in totals:
        if check_below:
            if q(total, float(candidates[0]) - 1.0) > threshold:
                limits.append(-math.inf)
                continue
        lo, hi = lo_idx, len(candidates) - 1
        if q(total, float(candidates[hi])) <= threshold:
            limits.append(float(candidates[hi]))
            lo_idx, check_below = hi, False
            continue
        while lo < hi:
            mid = (lo + hi) // 2
            if q(total, float(candidates[mid])) > threshold:
                hi = mid
            else:
                lo = mid + 1
        limits.append(float(candidates[lo]))
        lo_idx, check_below = lo, False
    return limits


def stratified_profile(
    table: OutcomeTable,
    ranks: Sequence[int],
    alpha: float,
    specs: SpecsLike,
    method: str = "M1str",
    solver: str = "dp",
    mode: str = "auto",
    mc_draws: int = 10_000,
    seed: int = 0,
) -> ITEProfileCI:
    """Simultaneous lower confidence limits for effect quantiles under
    stratified randomization.

    M1str inverts the worst-case test per rank. M2str pools within-arm
    profiles (treated arm directly, control arm through the arm-flipped
    table) and is valid at level 2 * alpha.
    """
    validate_table(table, "stratified")
    ranks = _checked_ranks(table.n, ranks)
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    engine = _StratifiedEngine(table, specs)
    null = stratified_null_distribution(
        table, specs, mode=mode, mc_draws=mc_draws, seed=seed, _engine=engine
    )
    candidates = engine.candidate_grid()
    if method == "M1str":
        totals = [min(table.n - k, engine.n1) for k in ranks]
        limits = _invert_stratified(engine, null, totals, alpha, candidates, solver)
        limits = list(np.maximum.accumulate(limits))
        level = 1.0 - alpha
        tag = "M1str"
    elif method == "M2str":
        if alpha > 0.25:
            raise ValueError("alpha must be at most 0.25 for the pooled method")
        totals_t = [engine.n1 - j for j in range(1, engine.n1 + 1)]
        treated_limits = _invert_stratified(
            engine, null, totals_t, alpha, candidates, solver
        )
        flipped = table.flipped()
        f_engine = _StratifiedEngine(flipped, specs)
        f_null = stratified_null_distribution(
            flipped, specs, mode=mode, mc_draws=mc_draws, seed=seed + 1, _engine=f_engine
        )
        f_candidates = f_engine.candidate_grid()
        totals_c = [f_engine.n1 - j for j in range(1, f_engine.n1 + 1)]
        control_limits = _invert_stratified(
            f_engine, f_null, totals_c, alpha, f_candidates, solver
        )
        pooled = sorted(treated_limits + control_limits)
        limits = [pooled[k - 1] for k in ranks]
        level = 1.0 - 2.0 * alpha
        tag = "M2str"
    else:
        raise ValueError(f"unknown method {method!r}")
    return ITEProfileCI(
        quantile_ranks=tuple(ranks),
        lower_limits=tuple(limits),
        level=level,
        simultaneous=True,
        method_tag=tag,
    )


def _require_pairs(table: OutcomeTable) -> None:
    validate_table(table, "stratified")
    for label in table.stratum_labels():
        idx = table.stratum_indices(label)
        if len(idx) != 2 or int(table.arms[idx].sum()) != 1:
            raise ValueError(
                f"sensitivity analysis requires matched pairs; stratum {label!r} "
                f"is not one treated and one control"
            )


def _sensitivity_null(
    engine: _StratifiedEngine,
    gamma: float,
    mode: str,
    mc_draws: int,
    seed: int,
) -> NullDistribution:
    """Least favorable reference distribution under the odds-ratio model:
    each pair independently contributes its larger score with probability
    gamma / (1 + gamma). Monte Carlo uses uniforms that do not depend on
    gamma, so p-values are coupled monotone across a gamma grid."""
    q = SensitivityModel(gamma).worst_prob
    s_count = len(engine.labels)
    lo = np.array([engine.engines[label].scores[0] for label in engine.labels])
    hi = np.array([engine.engines[label].scores[1] for label in engine.labels])
    if mode == "auto":
        mode = "exact" if s_count <= 15 else "monte_carlo"
    if mode == "exact":
        if 2**s_count > EXACT_CAP:
            raise ValueError(f"exact enumeration infeasible: 2^{s_count} > {EXACT_CAP}")
        parts = [
            (np.array([lo[s], hi[s]]), np.array([1.0 - q, q]))
            for s in range(s_count)
        ]
        values, weights = _convolve_weighted(parts)
        return NullDistribution(mode="exact", values=values, total=1, weights=weights)
    if mode != "monte_carlo":
        raise ValueError(f"unknown mode {mode!r}")
    rng = substream_rng(seed, "sensitivity-null", s_count)
    u = rng.random((mc_draws, s_count))
    draws = np.where(u < q, hi[None, :], lo[None, :]).sum(axis=1)
    return NullDistribution(mode="monte_carlo", values=draws, total=mc_draws)


def sensitivity_pvalue_pairs(
    table: OutcomeTable,
    h: QuantileHypothesis,
    gamma: float,
    spec: RankScoreSpec,
    mode: str = "auto",
    mc_draws: int = 10_000,
    seed: int = 0,
) -> float:
    """Worst-case p-value over both the effect minimization and all matched-
    pair assignment laws with within-pair odds ratio at most gamma.

    gamma = 1 is exactly the randomization analysis and delegates to it,
    sharing the enumeration path bit for bit.
    """
    _require_pairs(table)
    if SensitivityModel(gamma).gamma == 1.0:
        return pvalue_quantile_stratified(
            table, h, spec, solver="dp", mode=mode, mc_draws=mc_draws, seed=seed
        )
    engine = _StratifiedEngine(table, spec)
    t_min, _ = knapsack_min_stat(table, h, spec, solver="dp", _engine=engine)
    null = _sensitivity_null(engine, gamma, mode, mc_draws, seed)
    return null.tail(t_min)


def sensitivity_profile_pairs(
    table: OutcomeTable,
    ranks: Sequence[int],
    alpha: float,
    gamma: float,
    spec: RankScoreSpec,
    mode: str = "auto",
    mc_draws: int = 10_000,
    seed: int = 0,
) -> ITEProfileCI:
    """Simultaneous lower limits for effect quantiles that remain valid for
    every matched-pair assignment law within the gamma model."""
    _require_pairs(table)
    ranks = _checked_ranks(table.n, ranks)
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    engine = _StratifiedEngine(table, spec)
    if SensitivityModel(gamma).gamma == 1.0:
        null = stratified_null_distribution(
            table, spec, mode=mode, mc_draws=mc_draws, seed=seed, _engine=engine
        )
    else:
        null = _sensitivity_null(engine, gamma, mode, mc_draws, seed)
    candidates = engine.candidate_grid()
    totals = [min(table.n - k, engine.n1) for k in ranks]
    limits = _invert_stratified(engine, null, totals, alpha, candidates, "dp")
    limits = list(np.maximum.accumulate(limits))
    return ITEProfileCI(
        quantile_ranks=tuple(ranks),
        lower_limits=tuple(limits),
        level=1.0 - alpha,
        simultaneous=True,
        method_tag=f"SA-{gamma:g}",
    )


def amplify_gamma(
    gamma: float, lambdas: Optional[Sequence[float]] = None
) -> list[tuple[float, float]]:
    """Decompose a sensitivity parameter into (selection, outcome) pairs on
    the curve (Lambda * Delta + 1) / (Lambda + Delta) = gamma.

    A single gamma is equivalent to an unobserved confounder multiplying the
    odds of treatment by up to Lambda and the odds of a higher outcome by up
    to Delta, for any pair on the curve. With no lambdas given, returns the
    symmetric point Lambda = Delta = gamma + sqrt(gamma^2 - 1).
    """
    if not (gamma > 1.0):
        raise ValueError("amplification requires gamma > 1")
    if lambdas is None:
        sym = gamma + math.sqrt(gamma * gamma - 1.0)
        return [(sym, sym)]
    out = []
    for lam in lambdas:
        if lam <= gamma:
            raise ValueError(
                f"selection odds {lam} must exceed gamma {gamma} for a valid "
                f"decomposition"
            )
        delta = (gamma * lam - 1.0) / (lam - gamma)
        out.append((float(lam), float(delta)))
    return out
