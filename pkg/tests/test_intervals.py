"""Free-boundary search: two-sided pairs, domain-edge intervals, merge logic."""

import math

import numpy as np
import pytest

from stopflow import intervals as I
from stopflow import odesol as O
from stopflow.intervals import Kind
from tests.conftest import gbm_problem

SQ3 = math.sqrt(3.0)


def quadratic_pair(x3: float, x4: float) -> tuple[float, float]:
    """Boundary pair for one positive window [x3, x4] under d = (-1, 1).

    The two boundary integrals reduce to b - a = 2 (x4 - x3) and
    1/a - 1/b = 2/x3 - 2/x4, a quadratic in a.
    """
    width = x4 - x3
    rhs = 2.0 / x3 - 2.0 / x4
    # a (a + 2 width) = 2 * (2 width) / rhs... solve directly:
    # 1/a - 1/(a + 2w) = rhs  =>  2w / (a(a+2w)) = rhs
    prod = 2.0 * width / rhs
    a = -width + math.sqrt(width * width + prod)
    return a, a + 2.0 * width


def merged_pair_left() -> tuple[float, float]:
    """Composite pair for windows [1,2] and [2.5,3.5]: b - a = 4 and
    1/a - 1/b = 2/1 - 2/2 + 2/2.5 - 2/3.5, so a (a+4) = 4/rhs."""
    rhs = 1.0 + 2.0 / 2.5 - 2.0 / 3.5
    prod = 4.0 / rhs
    a = -2.0 + math.sqrt(4.0 + prod)
    return a, a + 4.0


class TestSmoothFitResidual:
    def test_at_true_boundary(self, ex1_twosided):
        res = I.smooth_fit_residual(ex1_twosided, 0.5)
        assert res is not None
        b, psi = res
        assert b == pytest.approx(2.5, abs=1e-6)
        assert psi == pytest.approx(0.0, abs=1e-6)

    def test_inside_interval_negative_slope(self, ex1_twosided):
        res = I.smooth_fit_residual(ex1_twosided, 0.7)
        assert res is not None
        b, psi = res
        assert psi < -1e-3
        # brute-scan oracle: the curve is negative just beyond its first zero
        curve = O.v_curve(ex1_twosided, 0.7, 0.0)
        assert curve.eval(b * 1.01)[0] < 0.0

    def test_absent_on_nonpositive_payoff_window(self, ex1_twosided):
        assert I.smooth_fit_residual(ex1_twosided, 2.6, window=(2.55, 9.0)) is None


class TestFindTwoSided:
    def test_ex1(self, ex1_twosided):
        pairs = I.find_two_sided(ex1_twosided)
        assert len(pairs) == 1
        a, b = pairs[0]
        # closed form: a = (3 x1 - x2)/2, b = (3 x2 - x1)/2
        assert a == pytest.approx(0.5, abs=1e-9)
        assert b == pytest.approx(2.5, abs=1e-9)

    def test_ex2_right_two_pairs(self, ex2_right):
        pairs = I.find_two_sided(ex2_right)
        assert len(pairs) == 2
        (a1, b1), (a2, b2) = pairs
        assert a1 == pytest.approx(SQ3 - 1.0, abs=1e-9)
        assert b1 == pytest.approx(SQ3 + 1.0, abs=1e-9)
        ra2, rb2 = quadratic_pair(3.5, 4.5)
        assert a2 == pytest.approx(ra2, abs=1e-9)
        assert b2 == pytest.approx(rb2, abs=1e-9)

    def test_ex2_left_merged(self, ex2_left):
        pairs = I.find_two_sided(ex2_left)
        assert len(pairs) == 1
        a, b = pairs[0]
        ra, rb = merged_pair_left()
        assert a == pytest.approx(ra, abs=1e-8)
        assert b == pytest.approx(rb, abs=1e-8)

    def test_sub_problem_pairs_match_figure_values(self):
        # the two stand-alone positive windows of the split configuration
        prob1 = gbm_problem([(1.0, 2.0)], -1.0, 1.0, 1.0 / 3.0)
        (a1, b1), = I.find_two_sided(prob1)
        assert b1 == pytest.approx(2.73, abs=0.005)
        prob2 = gbm_problem([(2.5, 3.5)], -1.0, 1.0, 1.0 / 3.0)
        (a2, _), = I.find_two_sided(prob2)
        assert a2 == pytest.approx(2.12, abs=0.005)


class TestFindOneSided:
    def test_ex1_onesided_lower_edge(self, ex1_onesided):
        lower, upper = I.find_one_sided(ex1_onesided)
        assert upper is None
        assert lower is not None
        assert lower.a_kind is Kind.DOMAIN_EDGE
        assert lower.a == 0.0
        b_true = math.sqrt(2.0 * (4.0 - (19.0 / 30.0) ** 2))
        assert lower.b == pytest.approx(b_true, abs=1e-6)

    def test_ex1_twosided_has_none(self, ex1_twosided):
        lower, upper = I.find_one_sided(ex1_twosided)
        assert lower is None and upper is None

    def test_ex2_has_none(self, ex2_right):
        lower, upper = I.find_one_sided(ex2_right)
        assert lower is None and upper is None


class TestMaximalIntervals:
    def test_disjoint_and_sorted(self, ex2_right):
        res = I.maximal_intervals(ex2_right)
        assert len(res) == 2
        for left, right in zip(res, res[1:]):
            assert left.b <= right.a

    def test_positive_payoff_midpoints_covered(self, ex2_right):
        res = I.maximal_intervals(ex2_right)
        for mid in (1.5, 4.0):
            assert any(mi.a <= mid <= mi.b for mi in res)

    def test_certificates(self, ex2_right):
        res = I.maximal_intervals(ex2_right)
        for mi in res:
            assert mi.certificate.global_min >= -1e-9 * mi.curve.scale()
            assert abs(mi.certificate.residuals.r1) <= 1e-9
            assert abs(mi.certificate.residuals.r2) <= 1e-9

    def test_interior_smooth_fit(self, ex2_left):
        res = I.maximal_intervals(ex2_left)
        for mi in res:
            for x, kind in ((mi.a, mi.a_kind), (mi.b, mi.b_kind)):
                if kind is Kind.INTERIOR:
                    v, dv = mi.curve.eval(x)
                    assert abs(v) <= 1e-9
                    assert abs(dv) <= 1e-9

    def test_one_sided_interval_in_collection(self, ex1_onesided):
        res = I.maximal_intervals(ex1_onesided)
        assert len(res) == 1
        assert res[0].a_kind is Kind.DOMAIN_EDGE
        assert res[0].b_kind is Kind.INTERIOR

    def test_numerical_path_ex1(self, ex1_numerical):
        res = I.maximal_intervals(ex1_numerical)
        assert len(res) == 1
        assert res[0].a == pytest.approx(0.5, abs=1e-3)
        assert res[0].b == pytest.approx(2.5, abs=1e-3)


class TestMergeTransition:
    def transition_x3(self) -> float:
        """Window start where the second pair's lower boundary meets b1.

        a2(x3) solves a2 (a2 + 2) = x3 (x3 + 1); equating a2 = sqrt(3) + 1
        gives x3^2 + x3 - (6 + 4 sqrt(3)) = 0.
        """
        return 0.5 * (-1.0 + math.sqrt(25.0 + 16.0 * SQ3))

    def count(self, x3: float) -> int:
        prob = gbm_problem([(1.0, 2.0), (x3, x3 + 1.0)], -1.0, 1.0, 1.0 / 3.0)
        return len(I.maximal_intervals(prob))

    def test_count_flips_once_at_predicted_point(self):
        x_lo, x_hi = 2.5, 3.5
        assert self.count(x_lo) == 1
        assert self.count(x_hi) == 2
        # bisect the flip
        lo, hi = x_lo, x_hi
        for _ in range(22):
            mid = 0.5 * (lo + hi)
            if self.count(mid) == 1:
                lo = mid
            else:
                hi = mid
        found = 0.5 * (lo + hi)
        assert found == pytest.approx(self.transition_x3(), abs=1e-6)

    def test_monotone_count_on_coarse_sweep(self):
        x3s = np.linspace(2.5, 3.5, 11)
        counts = [self.count(float(x)) for x in x3s]
        flips = sum(1 for c1, c2 in zip(counts, counts[1:]) if c1 != c2)
        assert flips == 1
        assert counts[0] == 1 and counts[-1] == 2
