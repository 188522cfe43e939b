"""Rank-score statistics, randomization null distributions, and sharp-null tests.

The central object is the statistic t(z, y) = sum_i z_i * phi(r_i(y)), where
r_i(y) are the ranks of y (ties broken by a pre-drawn random index order, so
ranks are always a permutation of 1..N) and phi is a monotone nondecreasing
score function. Because the ranks of any outcome vector form a permutation of
1..N, the randomization distribution of the statistic does not depend on the
outcome vector at all: it is the distribution of a sum of scores over a
uniform size-N_1 subset. That distribution is enumerated exactly when
C(N, N_1) is small and sampled otherwise.

Scores are integer-valued for both supported families, so statistic values
are exact in float64 and tail counts involve no floating-point tolerance.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Optional, Sequence, Union

import numpy as np

from .model import OneSidedInterval, OutcomeTable, validate_table
from .rng import substream_rng

__all__ = [
    "EXACT_CAP",
    "RankScoreSpec",
    "NullDistribution",
    "rank_with_tiebreak",
    "tiebreak_priority",
    "phi",
    "score_vector",
    "rank_score_stat",
    "null_distribution",
    "tail_probability",
    "frt_sharp",
    "sate_lower_limit",
]

# Largest number of assignments enumerated exactly.
EXACT_CAP = 200_000


@dataclass(frozen=True)
class RankScoreSpec:
    """Score family for rank statistics.

    kind 'wilcoxon': phi(r) = r.
    kind 'stephenson': phi(r) = C(r-1, s-1), zero for r < s; s = 1 degenerates
    to a constant score. Larger s concentrates weight on the top ranks, which
    targets large individual effects.

    tiebreak_seed fixes the random index order used to break outcome ties; it
    is drawn once per analysis and reused for every hypothesis evaluated
    within that analysis.
    """

    kind: str
    s: int = 2
    tiebreak_seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("wilcoxon", "stephenson"):
            raise ValueError(f"unknown score kind {self.kind!r}")
        if self.kind == "stephenson" and self.s < 1:
            raise ValueError("stephenson order s must be >= 1")

    @property
    def tag(self) -> str:
        return "W" if self.kind == "wilcoxon" else f"S{self.s}"


def tiebreak_priority(spec: RankScoreSpec, n: int) -> np.ndarray:
    """Priority of each index in the pre-shuffled order; lower ranks first."""
    shuffled = substream_rng(spec.tiebreak_seed, "tiebreak", n).permutation(n)
    priority = np.empty(n, dtype=np.int64)
    priority[shuffled] = np.arange(n)
    return priority


def rank_with_tiebreak(y: Sequence[float], spec: RankScoreSpec) -> np.ndarray:
    """Ranks 1..N of y, ties split by the spec's shuffled index order."""
    y = np.asarray(y, dtype=np.float64)
    order = np.lexsort((tiebreak_priority(spec, len(y)), y))
    ranks = np.empty(len(y), dtype=np.int64)
    ranks[order] = np.arange(1, len(y) + 1)
    return ranks


def phi(spec: RankScoreSpec, r: int, n: int) -> float:
    """Score of rank r among n units."""
    if not (1 <= r <= n):
        raise ValueError(f"rank {r} out of range 1..{n}")
    if spec.kind == "wilcoxon":
        return float(r)
    return float(math.comb(r - 1, spec.s - 1))


def score_vector(spec: RankScoreSpec, n: int) -> np.ndarray:
    """phi(1..n) as float64 (all values exact integers)."""
    if spec.kind == "wilcoxon":
        return np.arange(1, n + 1, dtype=np.float64)
    return np.array([math.comb(r - 1, spec.s - 1) for r in range(1, n + 1)], dtype=np.float64)


def rank_score_stat(z: Sequence[int], y: Sequence[float], spec: RankScoreSpec) -> float:
    """t(z, y) = sum of scores of treated units' ranks."""
    z = np.asarray(z, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError("assignment and outcome vectors must have equal length")
    scores = score_vector(spec, len(y))[rank_with_tiebreak(y, spec) - 1]
    return float(scores[z == 1].sum())


@dataclass(frozen=True)
class NullDistribution:
    """Randomization distribution of a statistic.

    mode 'exact': ``values`` enumerates one entry per assignment, or distinct
    values with ``weights`` summing to ``total`` (assignment counts for
    stratified convolutions, so the tail stays one integer-by-integer
    division; probability weights with total=1 for biased assignment laws).
    mode 'monte_carlo': ``values`` holds M sampled draws and the tail uses
    the conservative add-one estimator.
    """

    mode: str
    values: np.ndarray
    total: int
    weights: Optional[np.ndarray] = None
    _suffix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.mode not in ("exact", "monte_carlo"):
            raise ValueError(f"unknown mode {self.mode!r}")
        raw = np.asarray(self.values, dtype=np.float64)
        order = np.argsort(raw, kind="stable")
        values = raw[order]
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != values.shape:
                raise ValueError("weights must match values")
            w = w[order]
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
            suffix = np.cumsum(w[::-1])[::-1]
            if self.mode == "exact":
                suffix = suffix / self.total
        else:
            suffix = np.arange(len(values), 0, -1, dtype=np.float64)
            if self.mode == "exact":
                suffix = suffix / self.total
        suffix.setflags(write=False)
        object.__setattr__(self, "_suffix", suffix)

    def tail(self, t_obs: float) -> float:
        """Pr(T >= t_obs) in exact mode; add-one estimate in Monte Carlo mode."""
        idx = int(np.searchsorted(self.values, t_obs, side="left"))
        if self.mode == "exact":
            if idx >= len(self.values):
                return 0.0
            return float(min(self._suffix[idx], 1.0))
        count = len(self.values) - idx
        return (1.0 + count) / (1.0 + len(self.values))


def tail_probability(dist: NullDistribution, t_obs: float) -> float:
    return dist.tail(t_obs)


def _subset_sums_exact(scores: np.ndarray, n1: int) -> np.ndarray:
    n = len(scores)
    count = math.comb(n, n1)
    if count > EXACT_CAP:
        raise ValueError(f"exact enumeration infeasible: C({n},{n1}) = {count} > {EXACT_CAP}")
    if n1 == 0:
        return np.zeros(1)
    idx = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(n), n1)),
        dtype=np.int64,
        count=count * n1,
    ).reshape(count, n1)
    return scores[idx].sum(axis=1)


def _subset_sums_mc(
    scores: np.ndarray, n1: int, mc_draws: int, rng: np.random.Generator
) -> np.ndarray:
    n = len(scores)
    out = np.empty(mc_draws)
    block = max(1, min(mc_draws, 50_000_000 // max(n, 1)))
    for start in range(0, mc_draws, block):
        stop = min(start + block, mc_draws)
        u = rng.random((stop - start, n))
        chosen = np.argpartition(u, n1 - 1, axis=1)[:, :n1]
        out[start:stop] = scores[chosen].sum(axis=1)
    return out


def null_distribution(
    n: int,
    n1: int,
    y_ref: Optional[Sequence[float]] = None,
    spec: Optional[RankScoreSpec] = None,
    mode: str = "exact",
    mc_draws: int = 10_000,
    seed: int = 0,
) -> NullDistribution:
    """Distribution of the rank-score statistic over uniform assignments.

    ``y_ref`` is any reference outcome vector; vectors with distinct entries
    all produce the same distribution (ranks are a permutation of 1..N either
    way), so None uses the identity reference.
    """
    if spec is None:
        raise ValueError("a RankScoreSpec is required")
    if not (0 <= n1 <= n):
        raise ValueError("need 0 <= N_1 <= N")
    if y_ref is None:
        scores = score_vector(spec, n)
    else:
        y_ref = np.asarray(y_ref, dtype=np.float64)
        if len(y_ref) != n:
            raise ValueError("reference vector length mismatch")
        scores = score_vector(spec, n)[rank_with_tiebreak(y_ref, spec) - 1]
    if n1 == 0:
        return NullDistribution(mode="exact", values=np.zeros(1), total=1)
    if mode == "exact":
        values = _subset_sums_exact(scores, n1)
        return NullDistribution(mode="exact", values=values, total=len(values))
    if mode == "monte_carlo":
        rng = substream_rng(seed, "null-distribution", n, n1, spec.tag)
        values = _subset_sums_mc(scores, n1, mc_draws, rng)
        return NullDistribution(mode="monte_carlo", values=values, total=mc_draws)
    raise ValueError(f"unknown mode {mode!r}")


def _resolve_mode(mode: str, n: int, n1: int) -> str:
    if mode == "auto":
        return "exact" if math.comb(n, n1) <= EXACT_CAP else "monte_carlo"
    return mode


def frt_sharp(
    table: OutcomeTable,
    delta: Sequence[float],
    statistic: Union[RankScoreSpec, str],
    mode: str = "auto",
    mc_draws: int = 10_000,
    seed: int = 0,
) -> float:
    """Randomization test of the sharp null that every unit's effect is delta_i.

    Imputes the control potential outcomes Y(0) = Y - Z * delta and compares
    the observed statistic t(Z, Y(0)) with its distribution over re-drawn
    assignments. ``statistic`` is a RankScoreSpec or the string
    'diff_in_means'.
    """
    validate_table(table, "cre")
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != (table.n,):
        raise ValueError("delta must have one entry per unit")
    y0 = table.outcomes - table.arms * delta
    n, n1 = table.n, table.n1
    mode = _resolve_mode(mode, n, n1)

    if isinstance(statistic, RankScoreSpec):
        t_obs = rank_score_stat(table.arms, y0, statistic)
        dist = null_distribution(
            n, n1, y_ref=y0, spec=statistic, mode=mode, mc_draws=mc_draws, seed=seed
        )
        return dist.tail(t_obs)

    if statistic == "diff_in_means":
        # t(a, y0) is a strictly increasing affine map of the treated-group
        # sum of y0, so comparisons are done on the sum scale.
        s_obs = float(y0[table.arms == 1].sum())
        if mode == "exact":
            sums = _subset_sums_exact(y0, n1)
            return float(np.sum(sums >= s_obs)) / len(sums)
        rng = substream_rng(seed, "frt-diff-means", n, n1)
        sums = _subset_sums_mc(y0, n1, mc_draws, rng)
        return (1.0 + float(np.sum(sums >= s_obs))) / (1.0 + mc_draws)

    raise ValueError(f"unknown statistic {statistic!r}")


def _studentized(v: np.ndarray, treated_mask: np.ndarray) -> float:
    a, b = v[treated_mask], v[~treated_mask]
    se2 = np.var(a, ddof=1) / len(a) + np.var(b, ddof=1) / len(b)
    diff = float(a.mean() - b.mean())
    if se2 <= 0.0:
        return math.copysign(math.inf, diff) if diff != 0.0 else 0.0
    return diff / math.sqrt(se2)


def sate_lower_limit(
    table: OutcomeTable,
    alpha: float,
    method: str = "normal_approx",
    mc_draws: int = 10_000,
    seed: int = 0,
) -> OneSidedInterval:
    """One-sided lower confidence limit for the sample average treatment effect.

    'normal_approx' uses the conservative variance estimate
    s_1^2/N_1 + s_0^2/N_0; 'studentized_frt' inverts a randomization test of
    constant-shift nulls with a studentized statistic, searching the shift by
    bisection with one shared set of assignment draws.
    """
    validate_table(table, "cre")
    if table.n1 < 2 or table.n0 < 2:
        raise ValueError("both arms need at least 2 units")
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")

    y, z = table.outcomes, table.arms
    treated = z == 1
    tau_hat = float(y[treated].mean() - y[~treated].mean())
    s2 = np.var(y[treated], ddof=1) / table.n1 + np.var(y[~treated], ddof=1) / table.n0
    se = math.sqrt(max(s2, 0.0))

    if method == "normal_approx" or se == 0.0:
        if se == 0.0:
            if method == "studentized_frt":
                warnings.warn("degenerate within-arm variance; using the point estimate")
            else:
                warnings.warn("degenerate within-arm variance; half-width is 0")
            return OneSidedInterval(lower=tau_hat, level=1.0 - alpha)
        zq = NormalDist().inv_cdf(1.0 - alpha)
        return OneSidedInterval(lower=tau_hat - zq * se, level=1.0 - alpha)

    if method != "studentized_frt":
        raise ValueError(f"unknown method {method!r}")

    n, n1 = table.n, table.n1
    mode = _resolve_mode("auto", n, n1)
    if mode == "exact":
        masks = np.zeros((math.comb(n, n1), n), dtype=bool)
        for row, combo in enumerate(itertools.combinations(range(n), n1)):
            masks[row, list(combo)] = True
    else:
        rng = substream_rng(seed, "sate-frt", n, n1)
        masks = np.zeros((mc_draws, n), dtype=bool)
        for row in range(mc_draws):
            masks[row, rng.permutation(n)[:n1]] = True

    def pvalue(b: float) -> float:
        v = y - z * b
        t_obs = _studentized(v, treated)
        draws = np.fromiter(
            (_studentized(v, m) for m in masks), dtype=np.float64, count=len(masks)
        )
        count = int(np.sum(draws >= t_obs))
        if mode == "exact":
            return count / len(masks)
        return (1.0 + count) / (1.0 + len(masks))

    # Bracket inf{b : p(b) > alpha} around the normal-approximation limit.
    scale = max(se, 1e-12)
    lo = tau_hat - 2.0 * NormalDist().inv_cdf(1.0 - alpha) * scale - scale
    hi = tau_hat
    for _ in range(60):
        if pvalue(lo) <= alpha:
            break
        lo -= 4.0 * scale
    else:
        warnings.warn("could not bracket the studentized inversion; reporting -inf")
        return OneSidedInterval(lower=-math.inf, level=1.0 - alpha)
    while pvalue(hi) <= alpha:
        hi += 2.0 * scale
    tol = 1e-8 * max(1.0, abs(tau_hat), scale)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pvalue(mid) > alpha:
            hi = mid
        else:
            lo = mid
    return OneSidedInterval(lower=hi, level=1.0 - alpha)
