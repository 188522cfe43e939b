"""Estimator-style wrappers around the functional API.

Each estimator stores its constructor parameters verbatim (so get_params,
set_params, and clone behave), takes an OutcomeTable as the X argument of
fit, and exposes results as trailing-underscore attributes. predict is not
meaningful here; the fitted artifacts are confidence limits.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .hypergeom import (
    PlaceboInferenceResult,
    lod_shift,
    placebo_ci_count,
    placebo_ci_quantile,
    placebo_simultaneous,
)
from .model import OutcomeTable, fraction_to_rank, validate_table
from .rankstats import RankScoreSpec, sate_lower_limit
from .simulate import DEFAULT_FRACTIONS
from .strata import (
    amplify_gamma,
    sensitivity_profile_pairs,
    stratified_profile,
)
from .worstcase import MethodConfig, m2_profile, m3_profile, simultaneous_profile_m1

__all__ = [
    "QuantileProfileEstimator",
    "PlaceboQuantileEstimator",
    "StratifiedQuantileEstimator",
    "PairedSensitivityEstimator",
    "SATEEstimator",
    "resolve_ranks",
    "make_rank_spec",
]


def resolve_ranks(
    n: int,
    ranks: Optional[Sequence[int]],
    fractions: Optional[Sequence[float]],
) -> list[int]:
    """Explicit ranks win; otherwise fractions (default grid) map via ceil."""
    if ranks is not None:
        return sorted({int(k) for k in ranks})
    fractions = DEFAULT_FRACTIONS if fractions is None else fractions
    return sorted({fraction_to_rank(n, b) for b in fractions})


def make_rank_spec(stat: str, s: int, tiebreak_seed: int) -> RankScoreSpec:
    if stat in ("wilcoxon", "W", "w"):
        return RankScoreSpec(kind="wilcoxon", tiebreak_seed=tiebreak_seed)
    if stat in ("stephenson", "S", "s"):
        return RankScoreSpec(kind="stephenson", s=s, tiebreak_seed=tiebreak_seed)
    raise ValueError(f"unknown statistic {stat!r}")


class QuantileProfileEstimator(BaseEstimator):
    """Simultaneous lower confidence limits for effect quantiles in a
    completely randomized two-arm experiment (methods M1, M2, M3)."""

    def __init__(
        self,
        method: str = "M1",
        stat: str = "wilcoxon",
        stat_s: int = 2,
        stat_flipped: Optional[str] = None,
        stat_flipped_s: int = 6,
        alpha: float = 0.05,
        ranks: Optional[tuple] = None,
        fractions: Optional[tuple] = None,
        berger_boos_gamma: Optional[float] = None,
        tiebreak_seed: int = 0,
        mode: str = "auto",
        mc_draws: int = 10_000,
        seed: int = 0,
    ):
        self.method = method
        self.stat = stat
        self.stat_s = stat_s
        self.stat_flipped = stat_flipped
        self.stat_flipped_s = stat_flipped_s
        self.alpha = alpha
        self.ranks = ranks
        self.fractions = fractions
        self.berger_boos_gamma = berger_boos_gamma
        self.tiebreak_seed = tiebreak_seed
        self.mode = mode
        self.mc_draws = mc_draws
        self.seed = seed

    def _config(self) -> MethodConfig:
        primary = make_rank_spec(self.stat, self.stat_s, self.tiebreak_seed)
        flipped = None
        if self.stat_flipped is not None:
            flipped = make_rank_spec(
                self.stat_flipped, self.stat_flipped_s, self.tiebreak_seed
            )
        return MethodConfig(
            method=self.method,
            stat_primary=primary,
            stat_flipped=flipped,
            berger_boos_gamma=self.berger_boos_gamma,
        )

    def fit(self, X: OutcomeTable, y=None):
        validate_table(X, "cre")
        config = self._config()
        ranks = resolve_ranks(X.n, self.ranks, self.fractions)
        if self.method == "M1":
            profile = simultaneous_profile_m1(
                X, ranks, self.alpha, config, self.mode, self.mc_draws, self.seed
            )
        elif self.method == "M2":
            profile = m2_profile(
                X, ranks, self.alpha / 2.0, config, self.mode, self.mc_draws, self.seed
            )
        elif self.method == "M3":
            profile = m3_profile(
                X, ranks, self.alpha, config, self.mode, self.mc_draws, self.seed
            )
        else:
            raise ValueError(f"unknown method {self.method!r}")
        self.profile_ = profile
        self.ranks_ = list(profile.quantile_ranks)
        self.limits_ = np.asarray(profile.lower_limits)
        self.n_features_in_ = X.n
        return self


class PlaceboQuantileEstimator(BaseEstimator):
    """Closed-form placebo-arm inference when controls cannot exceed a
    detection bound; limits are on the effect scale of the shifted table."""

    def __init__(
        self,
        alpha: float = 0.05,
        ranks: Optional[tuple] = None,
        fractions: Optional[tuple] = None,
        simultaneous: bool = False,
        count_thresholds: Optional[tuple] = None,
        mc_draws: int = 100_000,
        seed: int = 0,
    ):
        self.alpha = alpha
        self.ranks = ranks
        self.fractions = fractions
        self.simultaneous = simultaneous
        self.count_thresholds = count_thresholds
        self.mc_draws = mc_draws
        self.seed = seed

    def fit(self, X: OutcomeTable, y=None):
        if X.lod is None:
            raise ValueError("placebo inference requires a table with a lod")
        shifted = lod_shift(X, X.lod)
        ranks = resolve_ranks(shifted.n, self.ranks, self.fractions)
        if self.simultaneous:
            profile = placebo_simultaneous(
                shifted, ranks, self.alpha, mc_draws=self.mc_draws, seed=self.seed
            )
            self.limits_ = np.asarray(profile.lower_limits)
            self.profile_ = profile
        else:
            intervals = [
                placebo_ci_quantile(shifted, k, self.alpha) for k in ranks
            ]
            self.limits_ = np.asarray([iv.lower for iv in intervals])
            self.intervals_ = intervals
        thresholds = self.count_thresholds
        if thresholds is None:
            thresholds = tuple(np.unique(shifted.treated_outcomes))
        self.count_limits_ = {
            float(c): placebo_ci_count(shifted, float(c), self.alpha)
            for c in thresholds
        }
        self.result_ = PlaceboInferenceResult(
            quantile_limits={int(k): float(v) for k, v in zip(ranks, self.limits_)},
            count_limits=self.count_limits_,
            alpha=self.alpha,
        )
        self.ranks_ = ranks
        self.n_features_in_ = X.n
        return self


class StratifiedQuantileEstimator(BaseEstimator):
    """Quantile profile under stratified randomization (M1str or M2str)."""

    def __init__(
        self,
        method: str = "M1str",
        stat: str = "wilcoxon",
        stat_s: int = 2,
        alpha: float = 0.05,
        ranks: Optional[tuple] = None,
        fractions: Optional[tuple] = None,
        solver: str = "dp",
        tiebreak_seed: int = 0,
        mode: str = "auto",
        mc_draws: int = 10_000,
        seed: int = 0,
    ):
        self.method = method
        self.stat = stat
        self.stat_s = stat_s
        self.alpha = alpha
        self.ranks = ranks
        self.fractions = fractions
        self.solver = solver
        self.tiebreak_seed = tiebreak_seed
        self.mode = mode
        self.mc_draws = mc_draws
        self.seed = seed

    def fit(self, X: OutcomeTable, y=None):
        validate_table(X, "stratified")
        spec = make_rank_spec(self.stat, self.stat_s, self.tiebreak_seed)
        ranks = resolve_ranks(X.n, self.ranks, self.fractions)
        alpha = self.alpha if self.method == "M1str" else self.alpha / 2.0
        profile = stratified_profile(
            X,
            ranks,
            alpha,
            spec,
            method=self.method,
            solver=self.solver,
            mode=self.mode,
            mc_draws=self.mc_draws,
            seed=self.seed,
        )
        self.profile_ = profile
        self.ranks_ = list(profile.quantile_ranks)
        self.limits_ = np.asarray(profile.lower_limits)
        self.n_features_in_ = X.n
        return self


class PairedSensitivityEstimator(BaseEstimator):
    """Sensitivity curves for matched pairs: one quantile profile per gamma,
    plus the symmetric amplification of every gamma above 1."""

    def __init__(
        self,
        gamma_grid: tuple = (1.0, 1.2, 1.5, 2.5, 3.3),
        stat: str = "wilcoxon",
        stat_s: int = 2,
        alpha: float = 0.05,
        ranks: Optional[tuple] = None,
        fractions: Optional[tuple] = None,
        tiebreak_seed: int = 0,
        mode: str = "auto",
        mc_draws: int = 10_000,
        seed: int = 0,
    ):
        self.gamma_grid = gamma_grid
        self.stat = stat
        self.stat_s = stat_s
        self.alpha = alpha
        self.ranks = ranks
        self.fractions = fractions
        self.tiebreak_seed = tiebreak_seed
        self.mode = mode
        self.mc_draws = mc_draws
        self.seed = seed

    def fit(self, X: OutcomeTable, y=None):
        spec = make_rank_spec(self.stat, self.stat_s, self.tiebreak_seed)
        ranks = resolve_ranks(X.n, self.ranks, self.fractions)
        self.profiles_ = {}
        for gamma in self.gamma_grid:
            self.profiles_[float(gamma)] = sensitivity_profile_pairs(
                X,
                ranks,
                self.alpha,
                float(gamma),
                spec,
                mode=self.mode,
                mc_draws=self.mc_draws,
                seed=self.seed,
            )
        self.amplification_ = {
            float(g): amplify_gamma(float(g))[0]
            for g in self.gamma_grid
            if g > 1.0
        }
        self.ranks_ = ranks
        self.n_features_in_ = X.n
        return self


class SATEEstimator(BaseEstimator):
    """One-sided lower confidence limit for the average effect."""

    def __init__(
        self,
        method: str = "normal_approx",
        alpha: float = 0.05,
        mc_draws: int = 10_000,
        seed: int = 0,
    ):
        self.method = method
        self.alpha = alpha
        self.mc_draws = mc_draws
        self.seed = seed

    def fit(self, X: OutcomeTable, y=None):
        validate_table(X, "cre")
        self.estimate_ = float(
            X.treated_outcomes.mean() - X.control_outcomes.mean()
        )
        self.interval_ = sate_lower_limit(
            X, self.alpha, method=self.method, mc_draws=self.mc_draws, seed=self.seed
        )
        self.lower_limit_ = float(self.interval_.lower)
        self.n_features_in_ = X.n
        return self
