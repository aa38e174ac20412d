import math

import numpy as np
import pytest

from lib.audit.cumulative import CombineOperator
from lib.audit.dataset import (
    AttributeSchema,
    Dataset,
    OutcomeColumn,
    ProtectedAttribute,
    Record,
    SubgroupKey,
    enumerate_subgroups,
)
from lib.audit.errors import LabelsRequired, NoEligibleSubgroup
from lib.audit.intersectional import (
    BELOW_MIN_SUPPORT,
    NO_NEGATIVE_SUPPORT,
    ZERO_RATE,
    PairEpsilonPolicy,
    PairOverride,
    differential_fairness,
    fpsf,
    pair_value,
    spsf,
    worst_case_fairness,
)
from lib.audit.metrics import Condition
from lib.audit.scenarios import gen_random

WM = SubgroupKey(('White', 'Male'))
WF = SubgroupKey(('White', 'Female'))
BM = SubgroupKey(('Black', 'Male'))
BF = SubgroupKey(('Black', 'Female'))

SINGLE = AttributeSchema(
    attributes=(ProtectedAttribute(name='group', domain=('a', 'b'), protected_value='b'),),
    label_column=OutcomeColumn(name='y', positive='1', negative='0'),
    prediction_column=OutcomeColumn(name='y_hat', positive='1', negative='0'),
)


def single(rows):
    """rows: (group, prediction, label)"""
    return Dataset.from_records(SINGLE, [Record(i, (g,), bool(p), bool(y)) for i, (g, p, y) in enumerate(rows)])


def audit(dataset, metric, **kwargs):
    return metric(dataset, enumerate_subgroups(dataset), **kwargs)


class TestSpsf:
    def test_white_female(self, gerrymandering):
        result = audit(gerrymandering, spsf)
        assert result.result(WF).value == pytest.approx(0.1, abs=1e-12)

    def test_every_occupied_subgroup_covered(self, gerrymandering):
        result = audit(gerrymandering, spsf)
        assert result.subgroups == (WM, WF, BM, BF)
        assert result.excluded == ()

    def test_combined_max(self, gerrymandering):
        result = audit(gerrymandering, spsf)
        # WM 0.2*0.5, WF 0.2*0.5, BM 0.4*0.25, BF 0.2*0.5
        assert result.combined.value == pytest.approx(0.1, abs=1e-12)
        assert result.arg_max == WM
        assert result.violated

    def test_epsilon_per_subgroup_before_combining(self, gerrymandering):
        result = audit(gerrymandering, spsf, epsilon=0.05, operator=CombineOperator.SUM)
        assert result.combined.value == pytest.approx(0.4 - 4 * 0.05, abs=1e-12)

    def test_homogeneous_rates_give_minus_epsilon(self):
        dataset = single([('a', 1, 1), ('a', 0, 0), ('b', 1, 1), ('b', 0, 0)])
        result = audit(dataset, spsf, epsilon=0.01)
        assert [r.value for r in result.results] == [-0.01, -0.01]
        assert not result.violated

    def test_weighting_bound(self):
        dataset = gen_random(n=64, k=3, seed=11)
        index = enumerate_subgroups(dataset)
        result = spsf(dataset, index, epsilon=0.02)
        for key, r in zip(result.subgroups, result.results):
            assert r.value <= index.size(key) / dataset.n - 0.02 + 1e-15

    def test_scarcity_lowers_spsf_but_not_wcf(self, gerrymandering):
        before_spsf = audit(gerrymandering, spsf).result(WF).value
        before_wcf = audit(gerrymandering, worst_case_fairness).combined.value
        # drop half of the White-Female records
        keep = np.r_[0:30, 40:100]
        smaller = gerrymandering.subset(keep)
        assert audit(smaller, spsf).result(WF).value < before_spsf
        assert audit(smaller, worst_case_fairness).combined.value == before_wcf


class TestFpsf:
    def test_perfect_classifier(self, gerrymandering_with_truth):
        result = audit(gerrymandering_with_truth, fpsf, epsilon=0.03)
        assert all(r.value == -0.03 for r in result.results)

    def test_no_negative_support_flag(self, gerrymandering_with_truth):
        result = audit(gerrymandering_with_truth, fpsf)
        assert NO_NEGATIVE_SUPPORT in result.result(WF).flags
        assert NO_NEGATIVE_SUPPORT not in result.result(WM).flags

    def test_requires_labels(self, gerrymandering):
        with pytest.raises(LabelsRequired):
            audit(gerrymandering, fpsf)

    def test_value(self):
        # negatives: a 2 (1 FP), b 2 (0 FP); overall FPR 1/4
        dataset = single([('a', 1, 0), ('a', 0, 0), ('a', 1, 1), ('b', 0, 0), ('b', 0, 0), ('b', 1, 1)])
        result = audit(dataset, fpsf)
        a, b = result.results
        assert a.value == pytest.approx((2 / 6) * abs(0.25 - 0.5))
        assert b.value == pytest.approx((2 / 6) * 0.25)


class TestDifferentialFairness:
    def test_zero_rate_sentinel(self, gerrymandering):
        result = audit(gerrymandering, differential_fairness)
        pair = result.pair(WF, WM)
        assert pair.value == math.inf
        assert ZERO_RATE in pair.flags
        assert result.combined.value == math.inf
        assert result.violated
        assert result.details['empirical_epsilon'] == math.inf

    def test_worst_pair_extremes(self, gerrymandering):
        result = audit(gerrymandering, differential_fairness)
        assert result.arg_min == WM
        assert result.arg_max == WF

    def test_pair_symmetry(self, gerrymandering):
        result = audit(gerrymandering, differential_fairness)
        assert result.pair(BM, WF) == result.pair(WF, BM)
        assert len(result.pairs) == 6

    def test_equal_rates(self):
        assert pair_value(0.4, 0.4, 0.0) == (0.0, False)
        assert pair_value(0.0, 0.0, 0.5)[0] == pytest.approx(1 - math.exp(0.5))

    def test_eighty_percent_boundary(self):
        value, zero = pair_value(0.8, 1.0, math.log(1 / 0.8))
        assert value == pytest.approx(0.0, abs=1e-12)
        assert not zero

    def test_from_ratio(self):
        dataset = single([('a', 1, 1)] * 5 + [('b', 1, 1)] * 4 + [('b', 0, 0)])
        result = audit(dataset, differential_fairness, policy=PairEpsilonPolicy.from_ratio(0.8))
        assert result.combined.value == pytest.approx(0.0, abs=1e-12)
        assert result.details['empirical_epsilon'] == pytest.approx(math.log(1.25))

    def test_pair_override_is_symmetric(self):
        policy = PairEpsilonPolicy(default=0.1, overrides=(PairOverride(pair=('White-Female', 'Black-Male'), epsilon=2.0),))
        assert policy.epsilon_for(BM, WF) == 2.0
        assert policy.epsilon_for(WF, BM) == 2.0
        assert policy.epsilon_for(WM, BM) == 0.1

    def test_combined_reports_epsilon_of_worst_pair(self):
        dataset = single([('a', 1, 1)] * 5 + [('b', 1, 1)] * 2 + [('b', 0, 0)] * 3)
        policy = PairEpsilonPolicy(default=0.1, overrides=(PairOverride(pair=('a', 'b'), epsilon=0.5),))
        result = audit(dataset, differential_fairness, policy=policy)
        assert result.combined.epsilon == 0.5
        assert result.combined.value == pytest.approx(2.5 - math.exp(0.5))

    def test_negative_class(self, gerrymandering):
        result = audit(gerrymandering, differential_fairness, positive_class=False)
        # rejection rates: WM 1, WF 0
        assert result.pair(WM, WF).value == math.inf
        assert result.details['empirical_epsilon'] == math.inf

    def test_smoothing_removes_sentinel(self, gerrymandering):
        result = audit(gerrymandering, differential_fairness, alpha=1.0)
        assert math.isfinite(result.combined.value)
        # WF (21/22) over WM (1/22)
        assert result.pair(WF, WM).value == pytest.approx(21 - 1)

    def test_min_support_excludes(self, gerrymandering):
        result = audit(gerrymandering, differential_fairness, min_support=30)
        assert result.subgroups == (BM,)
        assert {e.reason for e in result.excluded} == {BELOW_MIN_SUPPORT}
        assert result.pairs == ()
        assert result.combined.value == 0.0

    def test_to_dict_lists_pairs(self, gerrymandering):
        out = audit(gerrymandering, differential_fairness).to_dict()
        assert out['metric'] == 'df'
        assert out['pairs'][0]['pair'] == ['White-Male', 'White-Female']


class TestWorstCaseFairness:
    def test_gerrymandering(self, gerrymandering):
        result = audit(gerrymandering, worst_case_fairness)
        assert result.combined.value == 1.0
        assert result.arg_min == WM
        assert result.arg_max == WF
        assert result.details['rates']['Black-Male'] == 0.75

    def test_single_subgroup(self):
        dataset = single([('a', 1, 1), ('a', 0, 0)])
        assert audit(dataset, worst_case_fairness).combined.value == 0.0

    def test_all_rates_zero(self):
        dataset = single([('a', 0, 1), ('b', 0, 0)])
        result = audit(dataset, worst_case_fairness)
        assert result.combined.value == 0.0
        assert not result.violated

    def test_in_unit_interval(self):
        for seed in range(20):
            dataset = gen_random(n=64, k=3, seed=seed)
            value = audit(dataset, worst_case_fairness).combined.value
            assert 0.0 <= value <= 1.0

    def test_condition_undefined_rate_excluded(self):
        # group b has no positives, so its true-positive rate is undefined
        dataset = single([('a', 1, 1), ('a', 0, 1), ('b', 1, 0)])
        result = audit(dataset, worst_case_fairness, condition=Condition.TRUE_POSITIVE_RATE)
        assert [e.key.label for e in result.excluded] == ['b']
        assert result.combined.value == 0.0

    def test_no_eligible_subgroup(self, gerrymandering):
        with pytest.raises(NoEligibleSubgroup):
            audit(gerrymandering, worst_case_fairness, min_support=1000)
