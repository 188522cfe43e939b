"""Worst-case randomization inference for quantiles of individual effects.

The null hypothesis "the k-th smallest individual effect is at most c" is
composite: it constrains only how many effects may exceed c. A rank-score
statistic evaluated at adjusted outcomes Y - Z * delta attains its infimum
over all compatible effect vectors delta at a closed-form configuration:
give arbitrarily large effects to the min(N-k, N_1) treated units with the
largest observed outcomes (their adjusted outcomes drop below everything
else, so they occupy the lowest ranks), and give exactly c to the rest.
Comparing that minimized statistic with the assignment-randomization null
distribution yields a valid p-value for the composite null, and the family
over k is simultaneously valid without any multiplicity correction.

Three procedures are built on this engine:

- M1: direct inversion of the worst-case test, per rank.
- M2: run the same argument within the treated arm (ranks of treated-unit
  effects), flip arms and negate outcomes to do the same for the control arm,
  then pool all N limits in sorted order; valid at twice the per-arm level.
- M3: treat the number of treated units among the N-k largest effects as a
  hypergeometric nuisance, maximize the conditional worst-case p-value over
  a tail-symmetric confidence set for it, add the set's miscoverage gamma,
  and Bonferroni-combine the direct and flipped profiles.

All limits land on the finite candidate grid of treated-minus-control
outcome differences, where the p-value (a step function of c) jumps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .hypergeom import HypergeomParams, hyper_quantile
from .model import (
    ITEProfileCI,
    OneSidedInterval,
    OutcomeTable,
    QuantileHypothesis,
    validate_table,
)
from .rankstats import (
    EXACT_CAP,
    NullDistribution,
    RankScoreSpec,
    null_distribution,
    score_vector,
    tiebreak_priority,
)

__all__ = [
    "WorstCaseDelta",
    "MethodConfig",
    "worst_case_statistic",
    "pvalue_quantile_m1",
    "pvalue_quantile_m3",
    "invert_ci_quantile",
    "simultaneous_profile_m1",
    "m2_profile",
    "m3_profile",
    "candidate_grid",
]


@dataclass(frozen=True)
class WorstCaseDelta:
    """Minimizing effect configuration: huge effects on large_set, c elsewhere."""

    large_set: tuple
    base_value: float


@dataclass(frozen=True)
class MethodConfig:
    """Statistic choices for the profile methods.

    stat_primary drives the direct analysis; stat_flipped (defaulting to
    stat_primary) drives the arm-flipped analysis of M2/M3. berger_boos_gamma
    is the nuisance-set miscoverage for M3, defaulting to alpha/10.
    """

    method: str
    stat_primary: RankScoreSpec
    stat_flipped: Optional[RankScoreSpec] = None
    berger_boos_gamma: Optional[float] = None

    def __post_init__(self) -> None:
        if self.method not in ("M1", "M2", "M3"):
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def flipped(self) -> RankScoreSpec:
        return self.stat_flipped if self.stat_flipped is not None else self.stat_primary

    def tag(self) -> str:
        if self.method == "M1":
            return f"M1-{self.stat_primary.tag}"
        return f"{self.method}-{self.stat_primary.tag}-{self.flipped.tag}"


class _WorstCaseEngine:
    """Per-analysis state for evaluating minimized statistics quickly.

    Holds the tie-break priorities, the score vector, the treated units in
    sink order (descending observed outcome, descending priority within ties:
    sinking the unit that would otherwise rank higher removes the larger
    score), and prefix sums of the lowest scores.
    """

    def __init__(self, table: OutcomeTable, spec: RankScoreSpec):
        self.n = table.n
        self.n1 = table.n1
        self.y = table.outcomes
        self.z = table.arms
        self.spec = spec
        self.priority = tiebreak_priority(spec, self.n)
        self.scores = score_vector(spec, self.n)
        self.prefix = np.concatenate(([0.0], np.cumsum(self.scores)))
        treated_idx = np.nonzero(self.z == 1)[0]
        asc = np.lexsort((self.priority[treated_idx], self.y[treated_idx]))
        self.sink_order = treated_idx[asc[::-1]]
        self.is_treated = self.z == 1
        # Treated-minus-control differences, rows ascending in (y, priority).
        # Comparing these directly with a grid threshold keeps tie detection
        # exact: the inversion grid is built from the same float differences,
        # while re-deriving y - c rounds differently and can miss a tie.
        ascending = self.sink_order[::-1]
        self.diffs = self.y[ascending][:, None] - self.y[self.z == 0][None, :]

    def t_min(self, m: int, c: float, just_above: bool = False) -> float:
        """Minimized statistic with m treated units sunk and base value c.

        just_above=True evaluates the limit from the right of c: an adjusted
        treated outcome that ties a control outcome (difference exactly c)
        ranks below it, which is the value of the step function on the open
        interval above c.
        """
        if not (0 <= m <= self.n1):
            raise ValueError("sink count out of range")
        if just_above:
            kept = self.diffs[: self.n1 - m]
            controls_below = (kept > c).sum(axis=1)
            ranks_rest = 1 + np.arange(len(kept)) + controls_below
            return float(self.prefix[m] + self.scores[m + ranks_rest - 1].sum())
        keep = np.ones(self.n, dtype=bool)
        keep[self.sink_order[:m]] = False
        treated_keep = self.is_treated[keep]
        vals = np.where(self.is_treated, self.y - c, self.y)[keep]
        prio = self.priority[keep]
        order = np.lexsort((prio, vals))
        ranks_rest = np.empty(len(vals), dtype=np.int64)
        ranks_rest[order] = np.arange(1, len(vals) + 1)
        total = self.prefix[m]
        total += self.scores[m + ranks_rest[treated_keep] - 1].sum()
        return float(total)

    def large_set(self, m: int) -> tuple:
        return tuple(int(i) for i in self.sink_order[:m])


def candidate_grid(table: OutcomeTable) -> np.ndarray:
    """Thresholds where worst-case p-values can jump: all treated-minus-control
    outcome differences, plus the treated outcomes themselves."""
    yt = table.treated_outcomes
    yc = table.control_outcomes
    if len(yc) == 0:
        return np.unique(yt)
    diffs = (yt[:, None] - yc[None, :]).ravel()
    return np.unique(np.concatenate([diffs, yt]))


def _shared_null(
    table: OutcomeTable,
    spec: RankScoreSpec,
    mode: str,
    mc_draws: int,
    seed: int,
) -> NullDistribution:
    n, n1 = table.n, table.n1
    if mode == "auto":
        mode = "exact" if math.comb(n, n1) <= EXACT_CAP else "monte_carlo"
    return null_distribution(
        n, n1, y_ref=None, spec=spec, mode=mode, mc_draws=mc_draws, seed=seed
    )


def worst_case_statistic(
    table: OutcomeTable, h: QuantileHypothesis, spec: RankScoreSpec
) -> tuple[float, WorstCaseDelta]:
    """Infimum of the rank-score statistic over effect vectors compatible
    with "at most N - k effects exceed c", and the minimizing configuration."""
    validate_table(table, "cre")
    if not (1 <= h.k <= table.n):
        raise ValueError(f"rank k={h.k} out of range 1..{table.n}")
    engine = _WorstCaseEngine(table, spec)
    m = min(table.n - h.k, table.n1)
    value = engine.t_min(m, h.c)
    return value, WorstCaseDelta(large_set=engine.large_set(m), base_value=h.c)


def pvalue_quantile_m1(
    table: OutcomeTable,
    h: QuantileHypothesis,
    spec: RankScoreSpec,
    mode: str = "auto",
    mc_draws: int = 10_000,
    seed: int = 0,
) -> float:
    """Worst-case p-value for the composite null on the k-th smallest effect."""
    t_min, _ = worst_case_statistic(table, h, spec)
    null = _shared_null(table, spec, mode, mc_draws, seed)
    return null.tail(t_min)


def _berger_boos_set(n: int, n1: int, k: int, gamma: float) -> tuple[int, int]:
    """Tail-symmetric 1-gamma set for the number of treated units among the
    N-k units with the largest effects, at the least favorable exceedance
    count N(c) = N - k."""
    params = HypergeomParams(n, n - k, n1)
    lo = hyper_quantile(params, gamma / 2.0)
    hi = hyper_quantile(params, 1.0 - gamma / 2.0)
    return lo, hi


def pvalue_quantile_m3(
    table: OutcomeTable,
    h: QuantileHypothesis,
    spec: RankScoreSpec,
    gamma: float,
    mode: str = "auto",
    mc_draws: int = 10_000,
    seed: int = 0,
) -> tuple[float, dict]:
    """Nuisance-set worst-case p-value: max over b in the 1-gamma set of the
    conditional worst case with exactly b treated units sunk, plus gamma.

    Returns (p, {b: conditional p}). The conditional p is nondecreasing in b
    (sinking more treated units never increases the statistic, and a smaller
    statistic has a larger tail), so the max is attained at the largest b in
    the set.
    """
    validate_table(table, "cre")
    if not (1 <= h.k <= table.n):
        raise ValueError(f"rank k={h.k} out of range 1..{table.n}")
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0, 1)")
    engine = _WorstCaseEngine(table, spec)
    null = _shared_null(table, spec, mode, mc_draws, seed)
    b_lo, b_hi = _berger_boos_set(table.n, table.n1, h.k, gamma)
    per_b = {b: null.tail(engine.t_min(b, h.c)) for b in range(b_lo, b_hi + 1)}
    p = min(max(per_b.values()) + gamma, 1.0)
    return p, per_b


def _invert_on_grid(
    engine: _WorstCaseEngine,
    null: NullDistribution,
    m: int,
    threshold: float,
    candidates: np.ndarray,
    lo_idx: int,
    check_below: bool,
) -> tuple[float, int, bool]:
    """Smallest threshold c with tail(t_min(m, c)) > threshold.

    The tail evaluated just above c is a nondecreasing step function of c
    jumping only at candidates, so inf{c : p > threshold} is either -inf
    (when the value below every candidate already exceeds the threshold) or
    the first candidate whose just-above value does. Binary search from
    lo_idx; returns (limit, found_idx, still_below_possible).
    """

    def q(idx: int) -> float:
        return null.tail(engine.t_min(m, float(candidates[idx]), just_above=True))

    if check_below:
        below = null.tail(engine.t_min(m, float(candidates[0]) - 1.0, just_above=True))
        if below > threshold:
            return -math.inf, lo_idx, True

    hi = len(candidates) - 1
    if q(hi) <= threshold:
        # The step function never exceeds the threshold on the grid; beyond
        # the last candidate every treated unit sinks and the tail is 1.
        return float(candidates[hi]), hi, False
    lo = lo_idx
    while lo < hi:
        mid = (lo + hi) // 2
        if q(mid) > threshold:
            hi = mid
        else:
            lo = mid + 1
    return float(candidates[lo]), lo, False


def invert_ci_quantile(
    table: OutcomeTable,
    k: int,
    alpha: float,
    config: MethodConfig,
    mode: str = "auto",
    mc_draws: int = 10_000,
    seed: int = 0,
) -> OneSidedInterval:
    """Lower confidence limit inf{c : p_{k,c} > alpha} for the k-th smallest
    effect, by binary search over the candidate grid (M1 test)."""
    validate_table(table, "cre")
    if not (1 <= k <= table.n):
        raise ValueError(f"rank k={k} out of range 1..{table.n}")
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    engine = _WorstCaseEngine(table, config.stat_primary)
    null = _shared_null(table, config.stat_primary, mode, mc_draws, seed)
    candidates = candidate_grid(table)
    m = min(table.n - k, table.n1)
    limit, _, _ = _invert_on_grid(engine, null, m, alpha, candidates, 0, True)
    return OneSidedInterval(lower=limit, level=1.0 - alpha, kind="pointwise")


def _profile_over_sinks(
    engine: _WorstCaseEngine,
    null: NullDistribution,
    sink_counts: Sequence[int],
    threshold: float,
    candidates: np.ndarray,
) -> list[float]:
    """Inversion limits for a monotone family of sink counts.

    sink_counts must be nonincreasing (larger ranks allow less sinking), which
    makes the limits nondecreasing; each search warm-starts at the previous
    limit's grid index.
    """
    limits: list[float] = []
    lo_idx = 0
    check_below = True
    for m in sink_counts:
        limit, lo_idx, check_below = _invert_on_grid(
            engine, null, m, threshold, candidates, lo_idx, check_below
        )
        limits.append(limit)
    return limits


def simultaneous_profile_m1(
    table: OutcomeTable,
    ranks: Sequence[int],
    alpha: float,
    config: MethodConfig,
    mode: str = "auto",
    mc_draws: int = 10_000,
    seed: int = 0,
) -> ITEProfileCI:
    """Per-rank inversion at level alpha; jointly valid at level alpha because
    every worst-case test in the family is dominated by the same event under
    the truth. Limits are monotonized by running maximum (a no-op in exact
    arithmetic, but cheap insurance)."""
    validate_table(table, "cre")
    ranks = _checked_ranks(table.n, ranks)
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    engine = _WorstCaseEngine(table, config.stat_primary)
    null = _shared_null(table, config.stat_primary, mode, mc_draws, seed)
    candidates = candidate_grid(table)
    sink_counts = [min(table.n - k, table.n1) for k in ranks]
    limits = _profile_over_sinks(engine, null, sink_counts, alpha, candidates)
    limits = list(np.maximum.accumulate(limits))
    return ITEProfileCI(
        quantile_ranks=tuple(ranks),
        lower_limits=tuple(limits),
        level=1.0 - alpha,
        simultaneous=True,
        method_tag=f"M1-{config.stat_primary.tag}",
    )


def _checked_ranks(n: int, ranks: Sequence[int]) -> list[int]:
    out = [int(k) for k in ranks]
    if any(k2 < k1 for k1, k2 in zip(out, out[1:])):
        raise ValueError("ranks must be sorted")
    if not all(1 <= k <= n for k in out):
        raise ValueError(f"ranks out of range 1..{n}")
    return out


def _within_arm_limits(
    table: OutcomeTable,
    spec: RankScoreSpec,
    alpha: float,
    mode: str,
    mc_draws: int,
    seed: int,
) -> list[float]:
    """Simultaneous lower limits for the sorted effects of the treated arm.

    The hypothesis "the j-th smallest treated-unit effect is at most c"
    allows at most N_1 - j treated effects above c, so the same worst-case
    engine applies with sink count N_1 - j; control units' effects are
    unconstrained but never enter the statistic.
    """
    engine = _WorstCaseEngine(table, spec)
    null = _shared_null(table, spec, mode, mc_draws, seed)
    candidates = candidate_grid(table)
    sink_counts = [table.n1 - j for j in range(1, table.n1 + 1)]
    return _profile_over_sinks(engine, null, sink_counts, alpha, candidates)


def m2_profile(
    table: OutcomeTable,
    ranks: Sequence[int],
    alpha: float,
    config: MethodConfig,
    mode: str = "auto",
    mc_draws: int = 10_000,
    seed: int = 0,
) -> ITEProfileCI:
    """Pooled within-arm profile: treated-arm limits with the primary
    statistic, control-arm limits from the arm-flipped table with the flipped
    statistic (flipping arms and negating outcomes preserves every
    individual effect), then the j-th smallest pooled limit bounds the j-th
    smallest effect overall. Valid simultaneously at level 2 * alpha."""
    if not (0.0 < alpha <= 0.25):
        raise ValueError("alpha must lie in (0, 0.25] so the 2*alpha level is meaningful")
    ranks = _checked_ranks(table.n, ranks)
    if table.n0 == 0:
        # Degenerate input kept for completeness: the flipped family is empty
        # and the pooled profile is the treated-arm family alone.
        if table.n1 < 1 or not np.all(np.isfinite(table.outcomes)):
            raise ValueError("invalid table")
        pooled = _within_arm_limits(table, config.stat_primary, alpha, mode, mc_draws, seed)
    else:
        validate_table(table, "cre")
        treated_limits = _within_arm_limits(
            table, config.stat_primary, alpha, mode, mc_draws, seed
        )
        flipped_limits = _within_arm_limits(
            table.flipped(), config.flipped, alpha, mode, mc_draws, seed + 1
        )
        pooled = sorted(treated_limits + flipped_limits)
    limits = [pooled[k - 1] for k in ranks]
    return ITEProfileCI(
        quantile_ranks=tuple(ranks),
        lower_limits=tuple(limits),
        level=1.0 - 2.0 * alpha,
        simultaneous=True,
        method_tag=f"M2-{config.stat_primary.tag}-{config.flipped.tag}",
    )


def _m3_side_limits(
    table: OutcomeTable,
    spec: RankScoreSpec,
    ranks: Sequence[int],
    level: float,
    gamma: float,
    mode: str,
    mc_draws: int,
    seed: int,
) -> list[float]:
    engine = _WorstCaseEngine(table, spec)
    null = _shared_null(table, spec, mode, mc_draws, seed)
    candidates = candidate_grid(table)
    sink_counts = [
        _berger_boos_set(table.n, table.n1, k, gamma)[1] for k in ranks
    ]
    # p = tail + gamma, so inverting p > level means tail > level - gamma.
    return _profile_over_sinks(engine, null, sink_counts, level - gamma, candidates)


def m3_profile(
    table: OutcomeTable,
    ranks: Sequence[int],
    alpha: float,
    config: MethodConfig,
    mode: str = "auto",
    mc_draws: int = 10_000,
    seed: int = 0,
) -> ITEProfileCI:
    """Profile from the nuisance-set tests: direct and arm-flipped profiles
    each inverted at level alpha/2 and combined by taking the larger limit
    per rank (Bonferroni)."""
    validate_table(table, "cre")
    ranks = _checked_ranks(table.n, ranks)
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    gamma = config.berger_boos_gamma if config.berger_boos_gamma is not None else alpha / 10.0
    if not (0.0 < gamma < alpha):
        raise ValueError("berger_boos_gamma must lie in (0, alpha)")
    side = alpha / 2.0
    direct = _m3_side_limits(
        table, config.stat_primary, ranks, side, gamma, mode, mc_draws, seed
    )
    flipped = _m3_side_limits(
        table.flipped(), config.flipped, ranks, side, gamma, mode, mc_draws, seed + 1
    )
    limits = list(np.maximum.accumulate(np.maximum(direct, flipped)))
    return ITEProfileCI(
        quantile_ranks=tuple(ranks),
        lower_limits=tuple(limits),
        level=1.0 - alpha,
        simultaneous=True,
        method_tag=f"M3-{config.stat_primary.tag}-{config.flipped.tag}",
    )
