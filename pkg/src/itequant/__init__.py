"""Randomization inference on quantiles of individual treatment effects.

Two-arm experiments identify average effects easily; distributions of
unit-level effects are another matter, since no unit reveals both potential
outcomes. This package bounds quantiles of the individual effects from
below, with finite-sample validity coming only from the randomization
itself: closed-form bounds when controls cannot exceed a detection limit,
worst-case rank-statistic tests in the general case, stratified designs,
matched-pair sensitivity analysis, and a simulation harness.
"""

from .hypergeom import (
    HypergeomParams,
    PlaceboInferenceResult,
    hyper_pmf,
    hyper_quantile,
    hyper_tail,
    lod_shift,
    placebo_ci_count,
    placebo_ci_quantile,
    placebo_pvalue,
    placebo_simultaneous,
)
from .model import (
    ITEProfileCI,
    OneSidedInterval,
    OutcomeTable,
    PotentialOutcomeFrame,
    QuantileHypothesis,
    TableValidationError,
    empirical_ite_distribution,
    fraction_to_rank,
    validate_table,
)
from .rankstats import (
    EXACT_CAP,
    NullDistribution,
    RankScoreSpec,
    frt_sharp,
    null_distribution,
    rank_score_stat,
    sate_lower_limit,
)
from .estimators import (
    PairedSensitivityEstimator,
    PlaceboQuantileEstimator,
    QuantileProfileEstimator,
    SATEEstimator,
    StratifiedQuantileEstimator,
)
from .simulate import SimulationSpec, run_dgp, run_simulation, ss_metric
from .strata import (
    SensitivityModel,
    StratifiedAllocation,
    amplify_gamma,
    knapsack_min_stat,
    pvalue_quantile_stratified,
    sensitivity_profile_pairs,
    sensitivity_pvalue_pairs,
    stratified_profile,
    stratified_stat,
    stratum_option_value,
)
from .worstcase import (
    MethodConfig,
    WorstCaseDelta,
    invert_ci_quantile,
    m2_profile,
    m3_profile,
    pvalue_quantile_m1,
    pvalue_quantile_m3,
    simultaneous_profile_m1,
    worst_case_statistic,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "EXACT_CAP",
    "HypergeomParams",
    "ITEProfileCI",
    "MethodConfig",
    "NullDistribution",
    "OneSidedInterval",
    "OutcomeTable",
    "PairedSensitivityEstimator",
    "PlaceboInferenceResult",
    "PlaceboQuantileEstimator",
    "PotentialOutcomeFrame",
    "QuantileHypothesis",
    "QuantileProfileEstimator",
    "RankScoreSpec",
    "SATEEstimator",
    "SensitivityModel",
    "SimulationSpec",
    "StratifiedAllocation",
    "StratifiedQuantileEstimator",
    "TableValidationError",
    "WorstCaseDelta",
    "amplify_gamma",
    "empirical_ite_distribution",
    "fraction_to_rank",
    "frt_sharp",
    "hyper_pmf",
    "hyper_quantile",
    "hyper_tail",
    "invert_ci_quantile",
    "knapsack_min_stat",
    "lod_shift",
    "m2_profile",
    "m3_profile",
    "null_distribution",
    "placebo_ci_count",
    "placebo_ci_quantile",
    "placebo_pvalue",
    "placebo_simultaneous",
    "pvalue_quantile_m1",
    "pvalue_quantile_m3",
    "pvalue_quantile_stratified",
    "rank_score_stat",
    "run_dgp",
    "run_simulation",
    "sate_lower_limit",
    "sensitivity_profile_pairs",
    "sensitivity_pvalue_pairs",
    "simultaneous_profile_m1",
    "ss_metric",
    "stratified_profile",
    "stratified_stat",
    "stratum_option_value",
    "validate_table",
    "worst_case_statistic",
]
