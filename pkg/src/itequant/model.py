"""Shared data model for two-arm experiments and quantile-of-effect inference.

Conventions used throughout the package:

- Ranks are 1-based: tau_(1) <= ... <= tau_(N) are the sorted individual
  effects, with tau_(0) = -inf so that rank 0 denotes the vacuous hypothesis.
- Quantile fractions beta in (0, 1] map to ranks via k = ceil(N * beta).
- Outcomes are carried on the analysis scale (already transformed); the CLI
  owns transforms such as log10.
- Missing potential outcomes are explicit ``None`` entries, never NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "TableValidationError",
    "OutcomeTable",
    "PotentialOutcomeFrame",
    "QuantileHypothesis",
    "OneSidedInterval",
    "ITEProfileCI",
    "empirical_ite_distribution",
    "validate_table",
    "fraction_to_rank",
]


class TableValidationError(ValueError):
    """Raised when an outcome table violates the requirements of an analysis mode."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class OutcomeTable:
    """Observed data from a two-arm experiment.

    Parameters
    ----------
    ids : sequence of str
        Participant identifiers, one per row.
    arms : sequence of int
        Treatment indicators Z_i in {0, 1}.
    outcomes : sequence of float
        Observed outcomes Y_i on the analysis scale.
    strata : sequence of str, optional
        Stratum labels; either present on every row or absent entirely.
    lod : float, optional
        Detection bound on the analysis scale, required for placebo-control
        inference where the control response is known not to exceed it.
    """

    ids: tuple
    arms: np.ndarray
    outcomes: np.ndarray
    strata: Optional[tuple] = None
    lod: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        arms = _readonly(np.asarray(self.arms, dtype=np.int64))
        outcomes = _readonly(np.asarray(self.outcomes, dtype=np.float64))
        object.__setattr__(self, "arms", arms)
        object.__setattr__(self, "outcomes", outcomes)
        if self.strata is not None:
            object.__setattr__(self, "strata", tuple(str(s) for s in self.strata))
        n = len(self.ids)
        if arms.shape != (n,) or outcomes.shape != (n,):
            raise TableValidationError("ids, arms, and outcomes must have equal length")
        if self.strata is not None and len(self.strata) != n:
            raise TableValidationError("strata must have one label per row")
        if not np.all((arms == 0) | (arms == 1)):
            raise TableValidationError("arms must be 0/1 indicators")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def n1(self) -> int:
        return int(self.arms.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def treated_outcomes(self) -> np.ndarray:
        return self.outcomes[self.arms == 1]

    @property
    def control_outcomes(self) -> np.ndarray:
        return self.outcomes[self.arms == 0]

    def stratum_labels(self) -> tuple:
        """Distinct stratum labels in first-appearance order."""
        if self.strata is None:
            return ()
        seen: dict = {}
        for s in self.strata:
            seen.setdefault(s, None)
        return tuple(seen)

    def stratum_indices(self, label: str) -> np.ndarray:
        if self.strata is None:
            raise TableValidationError("table has no strata")
        mask = np.fromiter((s == label for s in self.strata), dtype=bool, count=self.n)
        return np.nonzero(mask)[0]

    def replace_outcomes(self, outcomes: Sequence[float]) -> "OutcomeTable":
        return OutcomeTable(self.ids, self.arms, outcomes, self.strata, self.lod)

    def flipped(self) -> "OutcomeTable":
        """Swap arms and negate outcomes.

        Individual effects are preserved: if Y'(1) = -Y(0) and Y'(0) = -Y(1),
        then Y'(1) - Y'(0) = Y(1) - Y(0). This is the device used to infer
        effects for the control arm with the same machinery.
        """
        return OutcomeTable(self.ids, 1 - self.arms, -self.outcomes, self.strata, None)


@dataclass(frozen=True)
class PotentialOutcomeFrame:
    """Science table: both potential outcomes per unit, possibly partly missing.

    ``tau`` is derived on construction wherever both entries are present.
    In simulation mode every entry is present; in analysis mode exactly one
    of y1/y0 is present per row.
    """

    y1: tuple
    y0: tuple
    tau: tuple = field(init=False)

    def __post_init__(self) -> None:
        y1 = tuple(None if v is None else float(v) for v in self.y1)
        y0 = tuple(None if v is None else float(v) for v in self.y0)
        if len(y1) != len(y0):
            raise ValueError("y1 and y0 must have equal length")
        tau = tuple(
            (a - b) if (a is not None and b is not None) else None
            for a, b in zip(y1, y0)
        )
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "tau", tau)

    @property
    def n(self) -> int:
        return len(self.y1)

    @property
    def complete(self) -> bool:
        return all(t is not None for t in self.tau)

    def tau_vector(self) -> np.ndarray:
        if not self.complete:
            raise ValueError("science table incomplete")
        return np.array([float(t) for t in self.tau])

    def observe(self, arms: Sequence[int]) -> np.ndarray:
        """Observed outcomes under assignment Z: Y_i = Z_i Y_i(1) + (1-Z_i) Y_i(0)."""
        z = np.asarray(arms, dtype=np.int64)
        if z.shape != (self.n,):
            raise ValueError("assignment length mismatch")
        out = np.empty(self.n)
        for i, zi in enumerate(z):
            v = self.y1[i] if zi == 1 else self.y0[i]
            if v is None:
                raise ValueError("science table incomplete")
            out[i] = v
        return out


@dataclass(frozen=True)
class QuantileHypothesis:
    """Null hypothesis that the k-th smallest individual effect is at most c.

    Equivalently: at most N - k individual effects exceed c. k = 0 denotes
    the vacuous hypothesis (tau_(0) = -inf), which can never be rejected.
    """

    k: int
    c: float

    def __post_init__(self) -> None:
        if self.k < 0:
            raise ValueError("rank k must be nonnegative")


@dataclass(frozen=True)
class OneSidedInterval:
    """One-sided interval [lower, inf); lower = -inf means non-informative."""

    lower: float
    level: float
    kind: str = "pointwise"

    def __post_init__(self) -> None:
        if not (0.0 < self.level < 1.0):
            raise ValueError("level must lie in (0, 1)")
        if self.kind not in ("pointwise", "simultaneous"):
            raise ValueError("kind must be 'pointwise' or 'simultaneous'")

    def contains(self, value: float) -> bool:
        return value >= self.lower


@dataclass(frozen=True)
class ITEProfileCI:
    """Lower confidence limits for sorted individual effects at selected ranks."""

    quantile_ranks: tuple
    lower_limits: tuple
    level: float
    simultaneous: bool
    method_tag: str

    def __post_init__(self) -> None:
        ranks = tuple(int(k) for k in self.quantile_ranks)
        limits = tuple(float(v) for v in self.lower_limits)
        object.__setattr__(self, "quantile_ranks", ranks)
        object.__setattr__(self, "lower_limits", limits)
        if len(ranks) != len(limits):
            raise ValueError("quantile_ranks and lower_limits must have equal length")
        if any(k2 < k1 for k1, k2 in zip(ranks, ranks[1:])):
            raise ValueError("quantile_ranks must be nondecreasing")
        if any(v2 < v1 for v1, v2 in zip(limits, limits[1:])):
            raise ValueError("lower_limits must be nondecreasing across ranks")

    def limit_at(self, k: int) -> float:
        try:
            return self.lower_limits[self.quantile_ranks.index(k)]
        except ValueError:
            raise KeyError(f"rank {k} not in profile") from None


def fraction_to_rank(n: int, beta: float) -> int:
    """Map a quantile fraction beta in (0, 1] to the 1-based rank ceil(N beta)."""
    if not (0.0 < beta <= 1.0):
        raise ValueError("fraction must lie in (0, 1]")
    return int(math.ceil(n * beta))


def empirical_ite_distribution(
    pof: PotentialOutcomeFrame,
) -> tuple[Callable[[float], float], np.ndarray]:
    """Empirical distribution of individual effects from a complete science table.

    Returns
    -------
    F : callable
        F(c) = N^-1 * #{i : tau_i <= c}, a right-continuous step function.
    sorted_taus : ndarray
        tau_(1) <= ... <= tau_(N).

    The associated quantile function is F^-1(beta) = tau_(ceil(N beta)).
    """
    taus = pof.tau_vector()
    sorted_taus = np.sort(taus)
    n = len(sorted_taus)

    def cdf(c: float) -> float:
        return float(np.searchsorted(sorted_taus, c, side="right")) / n

    return cdf, sorted_taus


def validate_table(t: OutcomeTable, mode: str) -> OutcomeTable:
    """Check that a table satisfies the requirements of an analysis mode.

    Modes: ``cre`` (completely randomized, both arms present), ``stratified``
    (stratum labels on every row, both arms within every stratum), ``placebo``
    (cre requirements plus a detection bound ``lod``).

    Returns the table unchanged when valid; raises TableValidationError with
    a distinct diagnostic otherwise.
    """
    if mode not in ("cre", "stratified", "placebo"):
        raise ValueError(f"unknown mode {mode!r}")
    if t.n < 2:
        raise TableValidationError("table must have at least 2 rows")
    if not np.all(np.isfinite(t.outcomes)):
        raise TableValidationError("non-finite outcomes")

    labeled = sum(1 for s in (t.strata or ()) if s not in (None, ""))
    if t.strata is not None and 0 < labeled < t.n:
        raise TableValidationError("mixed stratum labeling")

    if t.n1 == 0 or t.n0 == 0:
        raise TableValidationError("empty arms")

    if mode == "stratified":
        if t.strata is None or labeled < t.n:
            raise TableValidationError("stratified mode requires a stratum label on every row")
        for label in t.stratum_labels():
            idx = t.stratum_indices(label)
            arms = t.arms[idx]
            if not np.any(arms == 0):
                raise TableValidationError(f"stratum without controls: {label!r}")
            if not np.any(arms == 1):
                raise TableValidationError(f"stratum without treated: {label!r}")

    if mode == "placebo":
        if t.lod is None:
            raise TableValidationError("placebo mode requires lod")

    return t
