"""Coefficient parsing, validation, and GBM classification."""

import math

import numpy as np
import pytest

from stopflow import problem as P
from stopflow.errors import (
    DegenerateSign,
    IllPosedGbm,
    MalformedSegments,
    OutOfRange,
    SigmaNonPositive,
)

INF = float("inf")


def two_sided_payoff(x1=1.0, x2=2.0):
    return P.bump_payoff([(x1, x2)])


class TestPiecewiseExpr:
    def test_single_power_eval(self):
        sig = P.single_power(1.0, 1.0)
        assert sig(2.0) == 2.0

    def test_indicator_payoff_values(self):
        pi = two_sided_payoff()
        assert pi(1.5) == 1.0       # inside the positive window
        assert pi(0.5) == -1.0      # outside
        assert pi(1.0) == 1.0       # half-open convention: breakpoint owns the right
        assert pi(2.0) == -1.0

    def test_vectorised_eval_matches_scalar(self):
        pi = two_sided_payoff()
        xs = np.array([0.3, 1.0, 1.7, 2.0, 5.0])
        vals = pi.eval(xs)
        assert vals.tolist() == [pi(float(x)) for x in xs]

    def test_segments_must_tile(self):
        with pytest.raises(MalformedSegments):
            P.PiecewiseExpr((
                P.Segment(0.0, 1.0, ((1.0, 0.0),)),
                P.Segment(1.5, 2.0, ((1.0, 0.0),)),
            ))

    def test_bounds_must_increase(self):
        with pytest.raises(MalformedSegments):
            P.PiecewiseExpr((P.Segment(2.0, 1.0, ((1.0, 0.0),)),))

    def test_nonfinite_exponent_rejected(self):
        with pytest.raises(MalformedSegments):
            P.PiecewiseExpr((P.Segment(0.0, 1.0, ((1.0, math.inf),)),))

    def test_negative_exponent_needs_positive_segment(self):
        with pytest.raises(MalformedSegments):
            P.PiecewiseExpr((P.Segment(-1.0, 1.0, ((1.0, -1.0),)),))

    def test_out_of_range(self):
        pi = P.piecewise_constant([(0.0, 1.0, 1.0), (1.0, 2.0, -1.0)], 0.0, 2.0)
        with pytest.raises(OutOfRange):
            pi(3.0)

    def test_tiling_exact_on_random_partitions(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            cuts = np.sort(rng.uniform(0.1, 10.0, size=6))
            pieces = [(a, b, float(rng.normal())) for a, b in zip(cuts, cuts[1:])]
            expr = P.piecewise_constant(pieces, cuts[0], cuts[-1])
            for left, right in zip(expr.segments, expr.segments[1:]):
                assert left.hi == right.lo  # exact, not approximate


class TestWeightedIntegral:
    def test_against_quadrature(self):
        from scipy.integrate import quad

        pi = two_sided_payoff()
        table = P.PowerWeightedIntegral(pi, 1.0, 0.1, 10.0)
        for a, x in [(0.5, 2.5), (1.2, 1.8), (3.0, 0.2)]:
            want = quad(lambda z: z * pi(z), a, x,
                        points=[1.0, 2.0], limit=200)[0]
            got = table.between(a, x)
            assert got == pytest.approx(want, abs=1e-10)

    def test_log_term(self):
        f = P.single_power(1.0, 0.0, 0.0, INF)  # f = 1
        table = P.PowerWeightedIntegral(f, -1.0, 0.5, 4.0)
        assert table.between(1.0, math.e) == pytest.approx(1.0, abs=1e-12)


class TestClassifyGbm:
    def test_complex_roots(self):
        case = P.classify_gbm(0.5, 1.0, -1.0)
        assert case.tag is P.GbmRoots.COMPLEX_ROOTS
        # numeric cross-check: the quadratic has no real roots
        roots = np.roots([0.5, 0.5 - 0.5, 1.0])
        assert np.iscomplex(roots).all()

    def test_repeated_root(self):
        case = P.classify_gbm(1.5, 1.0, -0.5)
        assert case.tag is P.GbmRoots.REPEATED_ROOT
        assert case.d1 == pytest.approx(-1.0, abs=1e-12)

    def test_distinct_real_roots_vieta(self):
        case = P.classify_gbm(1.0, 1.0, 1.0)
        assert case.tag is P.GbmRoots.DISTINCT_REAL
        d1, d2 = case.d1.real, case.d2.real
        assert d1 < d2
        assert d1 * d2 == pytest.approx(-2.0, abs=1e-12)  # -2 r / sigma^2

    @pytest.mark.parametrize("alpha,sigma,r", [
        (1.0, 1.0, 1.0), (2.0, 1.0, -1.0), (0.3, 0.7, 0.11), (1.0 / 18, 1.0 / 3, 1.0 / 18),
    ])
    def test_roots_satisfy_polynomial(self, alpha, sigma, r):
        case = P.classify_gbm(alpha, sigma, r)
        half = 0.5 * sigma * sigma
        scale = max(abs(alpha - half), half, abs(r), 1.0)
        for d in (case.d1, case.d2):
            val = -half * d * d - (alpha - half) * d + r
            assert abs(val) <= 1e-12 * scale

    def test_alpha_reconstruction(self):
        case = P.classify_gbm(2.0, 1.0, -1.0)
        d1, d2 = case.d1.real, case.d2.real
        assert 0.5 * (1.0 - d1 - d2) == pytest.approx(2.0, rel=1e-12)


class TestValidate:
    def _spec(self, pi=None, sigma=None):
        return P.ProblemSpec(
            m=0.0, M=INF,
            alpha=P.single_power(2.0, 1.0),
            sigma=sigma or P.single_power(1.0, 1.0),
            r=P.constant(-1.0),
            pi=pi or two_sided_payoff(),
        )

    def test_example_config_is_valid(self):
        prob = P.validate(self._spec())
        assert prob.gbm is not None
        assert prob.gbm.d1 == pytest.approx(-2.0)
        assert prob.gbm.d2 == pytest.approx(-1.0)
        assert prob.mode == "closed_form"

    def test_one_signed_payoff_rejected(self):
        with pytest.raises(DegenerateSign):
            P.validate(self._spec(pi=P.constant(-1.0)))

    def test_zero_sigma_rejected(self):
        with pytest.raises(SigmaNonPositive):
            P.validate(self._spec(sigma=P.single_power(0.0, 1.0)))

    def test_sigma_negative_segment_rejected(self):
        sigma = P.PiecewiseExpr((
            P.Segment(0.0, 1.0, ((1.0, 1.0),)),
            P.Segment(1.0, INF, ((-1.0, 1.0),)),
        ))
        with pytest.raises(SigmaNonPositive):
            P.validate(self._spec(sigma=sigma))

    def test_repeated_root_gbm_rejected(self):
        alpha, r = P.gbm_coefficients(-1.0, -1.0, 1.0)
        spec = P.ProblemSpec(
            m=0.0, M=INF,
            alpha=P.single_power(alpha, 1.0),
            sigma=P.single_power(1.0, 1.0),
            r=P.constant(r),
            pi=two_sided_payoff(),
        )
        with pytest.raises(IllPosedGbm) as err:
            P.validate(spec)
        assert err.value.case.tag is P.GbmRoots.REPEATED_ROOT

    def test_complex_root_gbm_rejected(self):
        alpha, r = 0.5, -1.0
        spec = P.ProblemSpec(
            m=0.0, M=INF,
            alpha=P.single_power(alpha, 1.0),
            sigma=P.single_power(1.0, 1.0),
            r=P.constant(r),
            pi=two_sided_payoff(),
        )
        with pytest.raises(IllPosedGbm):
            P.validate(spec)

    def test_coefficients_must_cover_interval(self):
        with pytest.raises(MalformedSegments):
            P.validate(P.ProblemSpec(
                m=0.0, M=INF,
                alpha=P.single_power(1.0, 1.0, 0.0, 5.0),
                sigma=P.single_power(1.0, 1.0),
                r=P.constant(0.1),
                pi=two_sided_payoff(),
            ))

    def test_validation_deterministic(self):
        a = P.validate(self._spec())
        b = P.validate(self._spec())
        assert a.mode == b.mode
        assert a.gbm == b.gbm
        assert a.default_window() == b.default_window()
        assert a.breakpoints == b.breakpoints

    def test_eval_coeff(self):
        prob = P.validate(self._spec())
        assert P.eval_coeff(prob.pi, 1.5) == 1.0
        assert P.eval_coeff(prob.pi, 0.5) == -1.0
        assert P.eval_coeff(prob.sigma, 2.0) == 2.0
