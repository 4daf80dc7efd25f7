"""Turning points, zeta/kappa arithmetic, fusion, and their properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ablg.ablation import AblationCurve
from ablg.errors import DomainError
from ablg.sparsity import (fuse, kappa, quantify_curve, quantify_network,
                           turning_point_asc, turning_point_desc, zeta)


class TestTurningPointDesc:
    def test_direct_scan(self):
        n0, degenerate = turning_point_desc([0.9, 0.5, 0.05, 0.02], 0.1)
        assert (n0, degenerate) == (2, False)

    def test_boundary_at_zero(self):
        n0, degenerate = turning_point_desc([0.05, 0.5, 0.9], 0.1)
        assert (n0, degenerate) == (0, False)

    def test_degenerate_curve_returns_m_with_flag(self):
        n0, degenerate = turning_point_desc([0.9, 0.8, 0.7], 0.1)
        assert (n0, degenerate) == (2, True)

    def test_infimum_property(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            e = rng.random(9)
            chance = rng.random()
            n0, degenerate = turning_point_desc(e, chance)
            if not degenerate:
                assert e[n0] <= chance
                assert np.all(e[:n0] > chance)


class TestTurningPointAsc:
    def test_plain_argmax(self):
        assert turning_point_asc([0.5, 0.6, 0.9, 0.1]) == 2

    def test_constant_curve_ties_to_m(self):
        assert turning_point_asc([0.4, 0.4, 0.4]) == 2

    def test_tie_break_to_larger_n(self):
        assert turning_point_asc([0.5, 0.9, 0.9, 0.1]) == 2

    def test_no_later_equal_maximum(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            e_r = rng.integers(0, 5, size=11) / 4.0
            n0_r = turning_point_asc(e_r)
            assert np.all(e_r[n0_r] >= e_r)
            assert not np.any(e_r[n0_r + 1:] == e_r[n0_r])


class TestZeta:
    def test_extremes(self):
        assert zeta(0, 16, 16) == 0.0
        assert zeta(16, 0, 16) == 1.0

    def test_paper_scale_arithmetic(self):
        assert zeta(128, 384, 512) == pytest.approx(0.25)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            zeta(0, 0, 0)
        with pytest.raises(DomainError):
            zeta(17, 0, 16)

    @given(st.integers(1, 64).flatmap(
        lambda m: st.tuples(st.just(m), st.integers(0, m), st.integers(0, m),
                            st.integers(0, m), st.integers(0, m))))
    def test_monotone_in_turning_points(self, args):
        m, n0a, n0b, ra, rb = args
        lo_n0, hi_n0 = sorted((n0a, n0b))
        lo_r, hi_r = sorted((ra, rb))
        assert zeta(lo_n0, lo_r, m) <= zeta(hi_n0, lo_r, m)       # non-decreasing in n0
        assert zeta(lo_n0, hi_r, m) <= zeta(lo_n0, lo_r, m)       # non-increasing in n0_r
        assert 0.0 <= zeta(n0a, ra, m) <= 1.0


def _curves(min_m=1, max_m=32):
    return st.integers(min_m, max_m).flatmap(
        lambda m: st.tuples(
            arrays(np.float64, m + 1, elements=st.floats(0, 1)),
            arrays(np.float64, m + 1, elements=st.floats(0, 1))))


class TestKappa:
    def test_identical_curves_give_zero(self):
        e = np.array([0.9, 0.5, 0.1])
        assert kappa(e, e) == 0.0

    def test_extreme_separation_exceeds_one(self):
        m = 8
        value = kappa(np.zeros(m + 1), np.ones(m + 1))
        assert value == pytest.approx((m + 1) / m)

    def test_small_arithmetic(self):
        assert kappa([1, 0.5, 0], [1, 1, 0]) == pytest.approx(0.25)

    def test_normalization_by_training_accuracy(self):
        e, e_r = np.array([1.0, 0.0]), np.array([1.0, 1.0])
        assert kappa(e, e_r, normalize_by=0.5) == pytest.approx(2.0)
        with pytest.raises(DomainError):
            kappa(e, e_r, normalize_by=0.0)

    @given(_curves())
    @settings(max_examples=200)
    def test_symmetry_and_zero_iff_identical(self, pair):
        e, e_r = pair
        assert kappa(e, e_r) == kappa(e_r, e)
        if kappa(e, e_r) == 0.0:
            assert np.array_equal(e, e_r)

    @given(_curves())
    @settings(max_examples=200)
    def test_bounds(self, pair):
        e, e_r = pair
        m = e.shape[0] - 1
        assert 0.0 <= kappa(e, e_r) <= (m + 1) / m + 1e-12


class TestFuseAndQuantify:
    def _curve(self, class_id, e, e_r):
        e = np.asarray(e, dtype=float)
        return AblationCurve(class_id, 3, e.shape[0] - 1, e, np.asarray(e_r, float))

    def test_single_class_fused_equals_per_class(self):
        c = self._curve(0, [0.9, 0.05, 0.0], [0.9, 0.95, 0.0])
        q = quantify_network([c], acc_chance=0.25)
        assert q.zeta == q.per_class[0].zeta
        assert q.kappa == q.per_class[0].kappa

    def test_fused_is_arithmetic_mean_and_order_invariant(self):
        a = self._curve(0, [0.9, 0.05, 0.0], [0.9, 0.95, 0.0])
        b = self._curve(1, [0.8, 0.6, 0.0], [0.8, 0.8, 0.0])
        q1 = quantify_network([a, b], acc_chance=0.25)
        q2 = quantify_network([b, a], acc_chance=0.25)
        assert q1.zeta == pytest.approx(q2.zeta)
        assert q1.kappa == pytest.approx(q2.kappa)
        za, zb = q1.per_class[0].zeta, q1.per_class[1].zeta
        assert q1.zeta == pytest.approx((za + zb) / 2)

    def test_fuse_simple_mean(self):
        class Q:
            def __init__(self, z, k):
                self.zeta, self.kappa = z, k
        z, k = fuse([Q(0.2, 1.0), Q(0.4, 0.5)])
        assert z == pytest.approx(0.3)
        assert k == pytest.approx(0.75)
        with pytest.raises(DomainError):
            fuse([])

    def test_degenerate_flag_propagates_to_report(self):
        c = self._curve(2, [0.9, 0.8, 0.7], [0.9, 0.9, 0.9])   # never reaches chance
        q = quantify_network([c], acc_chance=0.1, network_id="net-x")
        assert q.per_class[0].degenerate
        assert q.degenerate_classes == [2]
        d = q.to_dict()
        assert d["per_class"][0]["flags"] == ["degenerate_desc"]
        assert d["degenerate_classes"] == [2]
        assert d["network_id"] == "net-x"

    def test_normalization_mode_recorded(self):
        c = self._curve(0, [0.9, 0.05, 0.0], [0.9, 0.95, 0.0])
        q = quantify_network([c], acc_chance=0.25, normalize_by=0.9)
        assert q.normalization == "train_acc"
        assert q.to_dict()["normalization"] == {"mode": "train_acc",
                                                "train_accuracy": 0.9}


@given(_curves(min_m=1, max_m=48), st.floats(0, 1))
@settings(max_examples=300)
def test_quantities_within_bounds_for_random_curves(pair, chance):
    e, e_r = pair
    m = e.shape[0] - 1
    curve = AblationCurve(0, 0, m, e, e_r)
    q = quantify_curve(curve, chance)
    assert 0.0 <= q.zeta <= 1.0
    assert 0.0 <= q.kappa <= (m + 1) / m + 1e-12
    assert 0 <= q.n0 <= m and 0 <= q.n0_r <= m
