"""Shared fixtures: the worked GBM configurations used throughout the suite."""

from __future__ import annotations

import os

import pytest

from stopflow import problem as P

CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def gbm_problem(x_pos, d1, d2, sigma, mode="auto", tolerances=None):
    """Indicator-payoff problem on (0, inf) driven by geometric Brownian motion."""
    alpha, r = P.gbm_coefficients(d1, d2, sigma)
    spec = P.ProblemSpec(
        m=0.0,
        M=float("inf"),
        alpha=P.single_power(alpha, 1.0),
        sigma=P.single_power(sigma, 1.0),
        r=P.constant(r),
        pi=P.bump_payoff(x_pos),
        tolerances=tolerances or P.Tolerances(),
    )
    return P.validate(spec, mode=mode)


@pytest.fixture(scope="session")
def ex1_twosided():
    """Single positive window [1, 2]; boundary pair lands at (0.5, 2.5)."""
    return gbm_problem([(1.0, 2.0)], -2.0, -1.0, 1.0)


@pytest.fixture(scope="session")
def ex1_onesided():
    """Positive window [19/30, 2]; continuation reaches the lower domain edge."""
    return gbm_problem([(19.0 / 30.0, 2.0)], -2.0, -1.0, 1.0)


@pytest.fixture(scope="session")
def ex2_right():
    """Two positive windows far enough apart to keep two maximal intervals."""
    return gbm_problem([(1.0, 2.0), (3.5, 4.5)], -1.0, 1.0, 1.0 / 3.0)


@pytest.fixture(scope="session")
def ex2_left():
    """Two positive windows close enough that the intervals merge into one."""
    return gbm_problem([(1.0, 2.0), (2.5, 3.5)], -1.0, 1.0, 1.0 / 3.0)


@pytest.fixture(scope="session")
def ex1_numerical():
    """Example 1 solved through the general integrator path."""
    return gbm_problem([(1.0, 2.0)], -2.0, -1.0, 1.0, mode="numerical")


def config_path(name: str) -> str:
    return os.path.join(CONFIG_DIR, name)
