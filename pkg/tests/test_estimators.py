import math

import numpy as np
import pytest
from sklearn.base import clone

from itequant.estimators import (
    PairedSensitivityEstimator,
    PlaceboQuantileEstimator,
    QuantileProfileEstimator,
    SATEEstimator,
    StratifiedQuantileEstimator,
    make_rank_spec,
    resolve_ranks,
)
from itequant.model import OutcomeTable


def cre_table(seed=3, n1=6, n0=6):
    rng = np.random.default_rng(seed)
    arms = np.array([1] * n1 + [0] * n0)
    y = np.round(np.concatenate([rng.normal(1.5, 1, n1), rng.normal(0, 1, n0)]), 2)
    return OutcomeTable(
        ids=tuple(f"u{i}" for i in range(n1 + n0)), arms=arms, outcomes=y
    )


def pairs_table(seed=4, pairs=6):
    rng = np.random.default_rng(seed)
    arms, outcomes, strata = [], [], []
    for p in range(pairs):
        arms.extend([1, 0])
        outcomes.extend(np.round(rng.normal(0.5, 1.0, 2), 2))
        strata.extend([f"p{p}"] * 2)
    return OutcomeTable(
        ids=tuple(f"u{i}" for i in range(2 * pairs)),
        arms=arms,
        outcomes=outcomes,
        strata=tuple(strata),
    )


def placebo_table():
    return OutcomeTable(
        ids=tuple(f"u{i}" for i in range(8)),
        arms=[1] * 4 + [0] * 4,
        outcomes=[3.2, 2.1, 1.4, 0.5] + [0.5] * 4,
        lod=0.5,
    )


class TestHelpers:
    def test_resolve_ranks_explicit_wins(self):
        assert resolve_ranks(10, [7, 3, 7], [0.5]) == [3, 7]

    def test_resolve_ranks_fractions(self):
        assert resolve_ranks(8, None, [0.5, 0.75, 0.8]) == [4, 6, 7]

    def test_resolve_ranks_default_grid(self):
        got = resolve_ranks(60, None, None)
        assert got == [30, 45, 48, 51, 54, 57]

    def test_make_rank_spec(self):
        assert make_rank_spec("wilcoxon", 2, 0).kind == "wilcoxon"
        spec = make_rank_spec("stephenson", 6, 5)
        assert spec.s == 6 and spec.tiebreak_seed == 5
        with pytest.raises(ValueError):
            make_rank_spec("savage", 2, 0)


class TestSklearnContract:
    ESTIMATORS = [
        QuantileProfileEstimator(method="M2", stat="stephenson", alpha=0.1),
        PlaceboQuantileEstimator(alpha=0.1),
        StratifiedQuantileEstimator(alpha=0.1),
        PairedSensitivityEstimator(gamma_grid=(1.0, 1.5)),
        SATEEstimator(alpha=0.1),
    ]

    def test_get_set_params_round_trip(self):
        for est in self.ESTIMATORS:
            params = est.get_params()
            rebuilt = type(est)(**params)
            assert rebuilt.get_params() == params

    def test_clone(self):
        for est in self.ESTIMATORS:
            cloned = clone(est)
            assert cloned.get_params() == est.get_params()

    def test_set_params_chains(self):
        est = QuantileProfileEstimator()
        assert est.set_params(alpha=0.2).alpha == 0.2


class TestQuantileProfileEstimator:
    def test_fit_attributes(self):
        est = QuantileProfileEstimator(
            method="M1", stat="stephenson", stat_s=2, alpha=0.1, ranks=(6, 10, 12)
        ).fit(cre_table())
        assert est.ranks_ == [6, 10, 12]
        assert est.limits_.shape == (3,)
        assert est.profile_.method_tag == "M1-S2"
        assert est.n_features_in_ == 12

    def test_m2_reports_full_alpha_level(self):
        est = QuantileProfileEstimator(method="M2", alpha=0.1, ranks=(10,)).fit(
            cre_table()
        )
        assert est.profile_.level == pytest.approx(0.9)

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="unknown method"):
            QuantileProfileEstimator(method="M9", ranks=(5,)).fit(cre_table())

    def test_requires_both_arms(self):
        bad = OutcomeTable(ids=("a", "b"), arms=[1, 1], outcomes=[1.0, 2.0])
        with pytest.raises(Exception):
            QuantileProfileEstimator(ranks=(1,)).fit(bad)


class TestPlaceboQuantileEstimator:
    def test_fit_produces_bundle(self):
        est = PlaceboQuantileEstimator(alpha=0.1, ranks=(6, 8)).fit(placebo_table())
        assert est.ranks_ == [6, 8]
        assert set(est.result_.quantile_limits) == {6, 8}
        assert est.count_limits_
        for c, bound in est.count_limits_.items():
            assert 0 <= bound <= 8

    def test_requires_lod(self):
        table = cre_table()
        with pytest.raises(ValueError, match="lod"):
            PlaceboQuantileEstimator(ranks=(6,)).fit(table)

    def test_simultaneous_limits_dominated_by_pointwise(self):
        table = placebo_table()
        point = PlaceboQuantileEstimator(alpha=0.1, ranks=(6, 7, 8)).fit(table)
        joint = PlaceboQuantileEstimator(
            alpha=0.1, ranks=(6, 7, 8), simultaneous=True, mc_draws=20_000
        ).fit(table)
        for a, b in zip(joint.limits_, point.limits_):
            assert a <= b

    def test_count_thresholds_param(self):
        est = PlaceboQuantileEstimator(
            alpha=0.1, ranks=(8,), count_thresholds=(0.0, 1.0)
        ).fit(placebo_table())
        assert set(est.count_limits_) == {0.0, 1.0}


class TestStratifiedQuantileEstimator:
    def test_fit(self):
        est = StratifiedQuantileEstimator(alpha=0.15, ranks=(8, 10, 12)).fit(
            pairs_table()
        )
        assert est.profile_.method_tag == "M1str"
        assert list(est.profile_.quantile_ranks) == [8, 10, 12]

    def test_m2str_level(self):
        est = StratifiedQuantileEstimator(
            method="M2str", alpha=0.1, ranks=(10,)
        ).fit(pairs_table())
        assert est.profile_.level == pytest.approx(0.9)


class TestPairedSensitivityEstimator:
    def test_fit_profiles_and_amplification(self):
        est = PairedSensitivityEstimator(
            gamma_grid=(1.0, 1.5), alpha=0.15, ranks=(9, 11)
        ).fit(pairs_table())
        assert set(est.profiles_) == {1.0, 1.5}
        assert set(est.amplification_) == {1.5}
        lam, delta = est.amplification_[1.5]
        assert lam == delta == pytest.approx(1.5 + math.sqrt(1.25))
        for a, b in zip(est.profiles_[1.5].lower_limits, est.profiles_[1.0].lower_limits):
            assert a <= b


class TestSATEEstimator:
    def test_fit(self):
        table = cre_table()
        est = SATEEstimator(alpha=0.1).fit(table)
        want = float(table.treated_outcomes.mean() - table.control_outcomes.mean())
        assert est.estimate_ == want
        assert est.lower_limit_ < want
        assert est.interval_.level == pytest.approx(0.9)
