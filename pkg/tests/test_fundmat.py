"""Fundamental-matrix properties: identities, closed forms, cross-validation."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from stopflow import fundmat as F
from stopflow.errors import NonPositiveState


class TestGbmClosedForm:
    def test_identity_at_equal_arguments(self):
        m = F.phi_gbm(-2.0, -1.0, 2.0, 2.0)
        assert (m.phi11, m.phi12, m.phi21, m.phi22) == (1.0, 0.0, 0.0, 1.0)

    def test_hand_values(self):
        # d1=-2, d2=-1, x=1, y=2:
        # phi12 = 1*(2^-1 - 2^-2)/(d2-d1) = 0.25, phi11 = (-1*2^-2 + 2*2^-1)/1 = 0.75
        m = F.phi_gbm(-2.0, -1.0, 1.0, 2.0)
        assert m.phi12 == pytest.approx(0.25, abs=1e-15)
        assert m.phi11 == pytest.approx(0.75, abs=1e-15)

    def test_positive_state_required(self):
        with pytest.raises(NonPositiveState):
            F.phi_gbm(-2.0, -1.0, -1.0, 2.0)

    def test_cocycle_closed_form(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b, c = np.sort(rng.uniform(0.5, 4.0, size=3))
            left = F.phi_gbm(-2.0, -1.0, a, c).as_array()
            right = F.phi_gbm(-2.0, -1.0, b, c).as_array() @ F.phi_gbm(-2.0, -1.0, a, b).as_array()
            assert np.max(np.abs(left - right)) <= 1e-13 * max(1.0, np.max(np.abs(left)))

    def test_complex_case_first_zero_sign_structure(self):
        # with complex roots a +- ib the entry phi12(x, .) vanishes at
        # y = x*exp(pi/b); there phi11 and phi22 must both be negative
        a, b = 0.5, 1.2
        x = 1.0
        y0 = x * math.exp(math.pi / b)
        m = F.phi_gbm_complex(a, b, x, y0)
        assert abs(m.phi12) <= 1e-12
        assert m.phi11 < 0.0
        assert m.phi22 < 0.0
        # before the zero, phi12 is positive
        m_before = F.phi_gbm_complex(a, b, x, 0.99 * y0)
        assert m_before.phi12 > 0.0


class TestNumericalFlow:
    def test_phi_at_equal_points_is_identity(self, ex1_numerical):
        fm = F.FundamentalMatrix(ex1_numerical)
        m = fm.phi(1.0, 1.0)
        assert (m.phi11, m.phi12, m.phi21, m.phi22) == (1.0, 0.0, 0.0, 1.0)

    def test_matches_closed_form_on_grid(self):
        # matrix entries reach ~1e3 on this grid, so the absolute 1e-8 target
        # needs the integrator a couple of digits below its default tolerance
        from tests.conftest import gbm_problem
        from stopflow.problem import Tolerances

        prob = gbm_problem([(1.0, 2.0)], -2.0, -1.0, 1.0, mode="numerical",
                           tolerances=Tolerances(ode_rtol=1e-12, ode_atol=1e-14))
        fm = F.FundamentalMatrix(prob)
        xs = np.linspace(0.5, 4.0, 10)
        worst = 0.0
        for x in xs:
            for y in xs:
                num = fm.phi(float(x), float(y)).as_array()
                ref = F.phi_gbm(-2.0, -1.0, float(x), float(y)).as_array()
                worst = max(worst, float(np.max(np.abs(num - ref))))
        assert worst <= 1e-8

    def test_cocycle_numerical(self, ex1_numerical):
        fm = F.FundamentalMatrix(ex1_numerical)
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(20):
            a, b, c = np.sort(rng.uniform(0.4, 5.0, size=3))
            left = fm.phi(float(a), float(c)).as_array()
            right = fm.phi(float(b), float(c)).as_array() @ fm.phi(float(a), float(b)).as_array()
            worst = max(worst, float(np.max(np.abs(left - right))))
        assert worst <= 1e-7

    def test_liouville_determinant(self, ex1_numerical):
        prob = ex1_numerical
        fm = F.FundamentalMatrix(prob)
        det = fm.phi(1.0, 3.0).det
        # independent quadrature of the drift-to-variance ratio
        expo = quad(lambda z: 2.0 * prob.alpha(z) / prob.sigma(z) ** 2,
                    1.0, 3.0, limit=200)[0]
        assert det == pytest.approx(math.exp(-expo), abs=1e-8)

    def test_forward_backward_composition(self, ex1_numerical):
        fm = F.FundamentalMatrix(ex1_numerical)
        fwd = fm.phi(1.0, 3.0).as_array()
        bwd = fm.phi(3.0, 1.0).as_array()
        assert np.max(np.abs(fwd @ bwd - np.eye(2))) <= 1e-8

    def test_determinant_positive_on_pairs(self, ex1_numerical):
        fm = F.FundamentalMatrix(ex1_numerical)
        rng = np.random.default_rng(5)
        for _ in range(20):
            a, b = rng.uniform(0.3, 6.0, size=2)
            assert fm.phi(float(a), float(b)).det > 0.0


class TestPhi12Positivity:
    @pytest.mark.parametrize("fixture", ["ex1_twosided", "ex2_right", "ex2_left"])
    def test_positive_above_diagonal(self, fixture, request):
        prob = request.getfixturevalue(fixture)
        fm = F.FundamentalMatrix(prob)
        xs = np.geomspace(0.2, 8.0, 12)
        for i, a in enumerate(xs):
            for b in xs[i + 1:]:
                assert fm.phi(float(a), float(b)).phi12 > 0.0

    def test_positive_numerical(self, ex1_numerical):
        fm = F.FundamentalMatrix(ex1_numerical)
        xs = np.geomspace(0.3, 6.0, 8)
        for i, a in enumerate(xs):
            for b in xs[i + 1:]:
                assert fm.phi(float(a), float(b)).phi12 > 0.0
