"""Exact hypergeometric inference for effect quantiles with known control response.

When every control potential outcome is known to be at most 0 (for example a
placebo arm whose response is below an assay detection bound, after shifting
the scale by that bound), the number of treated outcomes exceeding a threshold
is hypergeometric under the null that at most N - k individual effects exceed
the threshold. That yields exact p-values, closed-form one-sided confidence
limits for sorted individual effects, and exact lower bounds for exceedance
counts, with no reference-distribution simulation at all.

The kernel uses exact integer arithmetic (math.comb) for N <= 60 and
log-gamma arithmetic above, keeping the pmf normalized to 1 within 1e-12
across the supported range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .model import (
    ITEProfileCI,
    OneSidedInterval,
    OutcomeTable,
    QuantileHypothesis,
    TableValidationError,
    validate_table,
)
from .rng import substream_rng

__all__ = [
    "HypergeomParams",
    "PlaceboInferenceResult",
    "hyper_pmf",
    "hyper_tail",
    "hyper_quantile",
    "placebo_pvalue",
    "placebo_ci_quantile",
    "placebo_ci_count",
    "placebo_simultaneous",
    "lod_shift",
]

_EXACT_N_MAX = 60
# Relative slack absorbing float representation of theta (e.g. 0.9, 1 - alpha)
# when comparing against an exactly computed discrete CDF.
_CDF_SLACK = 1e-9


@dataclass(frozen=True)
class HypergeomParams:
    """Parameters (N, n, N_1): population size, successes, draws."""

    population: int
    successes: int
    draws: int

    def __post_init__(self) -> None:
        n_pop, n_succ, n_draw = self.population, self.successes, self.draws
        if n_pop < 0 or not (0 <= n_succ <= n_pop) or not (0 <= n_draw <= n_pop):
            raise ValueError(f"invalid hypergeometric parameters {self}")

    @property
    def support(self) -> tuple[int, int]:
        lo = max(0, self.draws + self.successes - self.population)
        hi = min(self.successes, self.draws)
        return lo, hi


def _log_choose(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


@lru_cache(maxsize=None)
def _pmf_values(population: int, successes: int, draws: int) -> tuple:
    """pmf over the support, exact integers for small N, log-gamma otherwise."""
    lo = max(0, draws + successes - population)
    hi = min(successes, draws)
    if population <= _EXACT_N_MAX:
        denom = math.comb(population, draws)
        return tuple(
            math.comb(successes, x) * math.comb(population - successes, draws - x) / denom
            for x in range(lo, hi + 1)
        )
    log_denom = _log_choose(population, draws)
    return tuple(
        math.exp(
            _log_choose(successes, x)
            + _log_choose(population - successes, draws - x)
            - log_denom
        )
        for x in range(lo, hi + 1)
    )


@lru_cache(maxsize=None)
def _tail_values(population: int, successes: int, draws: int) -> tuple:
    """G_H(x) for x over the support, accumulated from the top for accuracy."""
    pmf = _pmf_values(population, successes, draws)
    tails = []
    acc = 0.0
    for p in reversed(pmf):
        acc += p
        tails.append(min(acc, 1.0))
    tails.reverse()
    return tuple(tails)


def hyper_pmf(params: HypergeomParams, x: int) -> float:
    """Pr(X = x) = C(n,x) C(N-n, N_1-x) / C(N, N_1); 0 outside the support."""
    lo, hi = params.support
    if x < lo or x > hi:
        return 0.0
    return _pmf_values(params.population, params.successes, params.draws)[x - lo]


def hyper_tail(params: HypergeomParams, x: int) -> float:
    """Upper tail G_H(x) = Pr(X >= x); 1 at or below the support minimum."""
    lo, hi = params.support
    if x <= lo:
        return 1.0
    if x > hi:
        return 0.0
    return _tail_values(params.population, params.successes, params.draws)[x - lo]


def hyper_quantile(params: HypergeomParams, theta: float) -> int:
    """Smallest q in the support with Pr(X <= q) >= theta, for theta in (0, 1)."""
    if not (0.0 < theta < 1.0):
        raise ValueError("theta must lie in (0, 1)")
    lo, hi = params.support
    pmf = _pmf_values(params.population, params.successes, params.draws)
    acc = 0.0
    for q, p in enumerate(pmf):
        acc += p
        if acc >= theta - _CDF_SLACK * max(theta, 1.0):
            return lo + q
    return hi


def _max_x_with_tail_above(params: HypergeomParams, alpha: float) -> int:
    """max{x in support : G_H(x) > alpha}.

    Equals Q_H(1 - alpha) in exact arithmetic; computed from the tail array so
    that closed-form intervals and the p-value route share one comparison.
    """
    lo, _ = params.support
    tails = _tail_values(params.population, params.successes, params.draws)
    best = lo
    for i, t in enumerate(tails):
        if t > alpha:
            best = lo + i
    return best


def _require_placebo(table: OutcomeTable) -> None:
    validate_table(table, "placebo")
    if table.lod != 0.0:
        raise TableValidationError(
            "placebo inference expects a shifted table (lod == 0); apply lod_shift first"
        )
    if np.any(table.control_outcomes > 0):
        raise TableValidationError("control outcomes exceed the detection bound")


def _exceedance_count(table: OutcomeTable, c: float) -> int:
    """n(c) = number of treated outcomes strictly above c."""
    return int(np.sum(table.treated_outcomes > c))


def placebo_pvalue(table: OutcomeTable, h: QuantileHypothesis) -> float:
    """Exact p-value for the null that the k-th smallest effect is at most c.

    p = G_H(n(c); N, N-k, N_1) with n(c) the count of treated outcomes
    strictly above c. Valid because, under the null, at most N - k units can
    respond above c, and the treated arm is a simple random sample.
    """
    _require_placebo(table)
    if not (1 <= h.k <= table.n):
        raise ValueError(f"rank k={h.k} out of range 1..{table.n}")
    params = HypergeomParams(table.n, table.n - h.k, table.n1)
    p = hyper_tail(params, _exceedance_count(table, h.c))
    return min(max(p, 0.0), 1.0)


def placebo_ci_quantile(table: OutcomeTable, k: int, alpha: float) -> OneSidedInterval:
    """Closed-form lower confidence limit for the k-th smallest effect.

    Returns [y_(k(alpha)), inf) where y_(1) <= ... <= y_(N_1) are the sorted
    treated outcomes, y_(0) = -inf, and k(alpha) = N_1 - Q_H(1-alpha; N, N-k, N_1).
    Identical to inverting placebo_pvalue over thresholds c.
    """
    _require_placebo(table)
    if not (1 <= k <= table.n):
        raise ValueError(f"rank k={k} out of range 1..{table.n}")
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    params = HypergeomParams(table.n, table.n - k, table.n1)
    k_alpha = table.n1 - _max_x_with_tail_above(params, alpha)
    if k_alpha <= 0:
        lower = -math.inf
    else:
        lower = float(np.sort(table.treated_outcomes)[k_alpha - 1])
    return OneSidedInterval(lower=lower, level=1.0 - alpha, kind="pointwise")


def placebo_ci_count(table: OutcomeTable, c: float, alpha: float) -> int:
    """Lower confidence bound for the number of effects exceeding c.

    The 1-alpha confidence set for N(c) is {bound, ..., N} with
    bound = N - max{k : G_H(n(c); N, N-k, N_1) > alpha, 0 <= k <= N}.
    """
    _require_placebo(table)
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    n_c = _exceedance_count(table, c)
    best_k = 0
    for k in range(table.n, -1, -1):
        params = HypergeomParams(table.n, table.n - k, table.n1)
        if hyper_tail(params, n_c) > alpha:
            best_k = k
            break
    return table.n - best_k


def placebo_simultaneous(
    table: OutcomeTable,
    ranks: Sequence[int],
    alpha_target: float,
    mc_draws: int = 100_000,
    seed: int = 0,
) -> ITEProfileCI:
    """Simultaneous lower limits for several effect quantiles at once.

    Calibrates a common per-rank level alpha by bisection so that the Monte
    Carlo estimate of the joint miscoverage probability
    Pr(union_j { #treated among the top N - k_j units > Q_H(1-alpha; N, N-k_j, N_1) })
    is at most alpha_target. One shared set of assignment draws is used for
    every candidate alpha, making the objective a noise-free monotone step
    function of alpha. The bound is sharp when all effects are distinct.
    """
    _require_placebo(table)
    ranks = [int(k) for k in ranks]
    if any(k2 < k1 for k1, k2 in zip(ranks, ranks[1:])):
        raise ValueError("ranks must be sorted")
    if not all(1 <= k <= table.n for k in ranks):
        raise ValueError("ranks out of range")
    if mc_draws < 10_000:
        raise ValueError("mc_draws must be at least 10^4")
    if not (0.0 < alpha_target < 1.0):
        raise ValueError("alpha_target must lie in (0, 1)")

    n, n1 = table.n, table.n1
    rng = substream_rng(seed, "placebo-simultaneous")
    ks = np.asarray(ranks)

    # counts[m, j] = number of treated indices above k_j in draw m, where the
    # treated set is a uniform size-N_1 subset of {1..N}.
    counts = np.empty((mc_draws, len(ranks)), dtype=np.int32)
    block = 20_000
    for start in range(0, mc_draws, block):
        stop = min(start + block, mc_draws)
        u = rng.random((stop - start, n))
        sampled = np.argpartition(u, n1 - 1, axis=1)[:, :n1] + 1
        for j, kj in enumerate(ks):
            counts[start:stop, j] = (sampled > kj).sum(axis=1)

    params = [HypergeomParams(n, n - kj, n1) for kj in ranks]

    def union_prob(alpha: float) -> float:
        thresholds = np.array([_max_x_with_tail_above(p, alpha) for p in params])
        return float(np.mean(np.any(counts > thresholds, axis=1)))

    if union_prob(alpha_target) <= alpha_target:
        alpha_star = alpha_target
    else:
        lo, hi = 1e-12, alpha_target
        if union_prob(lo) > alpha_target:
            raise RuntimeError(
                "bisection failed to bracket: joint miscoverage "
                f"{union_prob(lo):.4f} at alpha={lo:g} already exceeds the target"
            )
        while hi - lo > 1e-4:
            mid = 0.5 * (lo + hi)
            if union_prob(mid) <= alpha_target:
                lo = mid
            else:
                hi = mid
        alpha_star = lo

    sorted_treated = np.sort(table.treated_outcomes)
    limits = []
    for p in params:
        k_alpha = n1 - _max_x_with_tail_above(p, alpha_star)
        limits.append(-math.inf if k_alpha <= 0 else float(sorted_treated[k_alpha - 1]))
    return ITEProfileCI(
        quantile_ranks=tuple(ranks),
        lower_limits=tuple(limits),
        level=1.0 - alpha_target,
        simultaneous=True,
        method_tag="placebo-simultaneous",
    )


def lod_shift(table: OutcomeTable, lod: float) -> OutcomeTable:
    """Shift outcomes down by the detection bound so controls sit at or below 0.

    Effect-scale limits computed on the shifted table need no unshifting (a
    treated outcome minus the bound is already a lower bound on that unit's
    effect); adding ``lod`` back expresses a limit on the outcome scale.
    """
    if not math.isfinite(lod):
        raise ValueError("lod must be finite")
    shifted = OutcomeTable(
        table.ids, table.arms, table.outcomes - lod, table.strata, 0.0
    )
    return shifted


@dataclass(frozen=True)
class PlaceboInferenceResult:
    """Bundle of placebo-mode outputs: quantile limits and count bounds."""

    quantile_limits: ITEProfileCI
    count_limits: dict
    alpha: float

    def __post_init__(self) -> None:
        thresholds = sorted(self.count_limits)
        bounds = [self.count_limits[c] for c in thresholds]
        if any(b2 > b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise ValueError("count limits must be nonincreasing in c")
        if any(not (0 <= b) for b in bounds):
            raise ValueError("count limits must be nonnegative")
