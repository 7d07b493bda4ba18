import math

import mpmath as mp
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conjmoments.errors import DomainError
from conjmoments.specfun import (
    beta_fn,
    binom,
    inc_gamma_lower,
    ln_beta,
    ln_gamma,
    reg_inc_beta,
    reg_inc_gamma_lower,
    rising_factorial,
)

mp.mp.dps = 40
pos = st.floats(1e-3, 200.0)


def test_ln_gamma_known_values():
    assert ln_gamma(1.0) == 0.0
    assert ln_gamma(2.0) == 0.0
    assert ln_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi), rel=1e-15)
    assert ln_gamma(10.0) == pytest.approx(math.log(362880.0), rel=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 1e6))
def test_ln_gamma_matches_mpmath(x):
    ref = float(mp.loggamma(x))
    assert ln_gamma(x) == pytest.approx(ref, rel=1e-13, abs=1e-14)


def test_ln_gamma_domain():
    for bad in (0.0, -1.0, float("nan")):
        with pytest.raises(DomainError):
            ln_gamma(bad)


@settings(max_examples=100, deadline=None)
@given(pos, pos)
def test_beta_matches_mpmath(a, b):
    assert ln_beta(a, b) == pytest.approx(float(mp.log(mp.beta(a, b))), rel=1e-12, abs=1e-13)


def test_beta_small_integers():
    assert beta_fn(2.0, 3.0) == pytest.approx(1.0 / 12.0, rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 150.0), st.floats(0.0, 400.0))
def test_reg_inc_gamma_matches_mpmath(s, x):
    ref = float(mp.gammainc(s, 0, x, regularized=True))
    assert reg_inc_gamma_lower(s, x) == pytest.approx(ref, rel=1e-12, abs=1e-15)


def test_reg_inc_gamma_edges():
    assert reg_inc_gamma_lower(2.5, 0.0) == 0.0
    assert reg_inc_gamma_lower(1.0, 1e6) == 1.0
    # P(1, x) = 1 - exp(-x)
    assert reg_inc_gamma_lower(1.0, 0.3) == pytest.approx(-math.expm1(-0.3), rel=1e-15)
    assert inc_gamma_lower(3.0, 2.0) == pytest.approx(float(mp.gammainc(3, 0, 2)), rel=1e-13)


def test_reg_inc_gamma_domain():
    with pytest.raises(DomainError):
        reg_inc_gamma_lower(0.0, 1.0)
    with pytest.raises(DomainError):
        reg_inc_gamma_lower(1.0, -1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 100.0), st.floats(0.05, 100.0), st.floats(0.0, 1.0))
def test_reg_inc_beta_matches_mpmath(a, b, x):
    ref = float(mp.betainc(a, b, 0, x, regularized=True))
    assert reg_inc_beta(a, b, x) == pytest.approx(ref, rel=1e-11, abs=1e-14)


def test_reg_inc_beta_symmetry_and_edges():
    assert reg_inc_beta(2.0, 3.0, 0.0) == 0.0
    assert reg_inc_beta(2.0, 3.0, 1.0) == 1.0
    assert reg_inc_beta(1.0, 1.0, 0.37) == pytest.approx(0.37, rel=1e-15)
    a, b, x = 3.3, 1.7, 0.42
    assert reg_inc_beta(a, b, x) + reg_inc_beta(b, a, 1 - x) == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(DomainError):
        reg_inc_beta(1.0, 1.0, 1.5)
    with pytest.raises(DomainError):
        reg_inc_beta(0.0, 1.0, 0.5)


def test_rising_factorial():
    assert rising_factorial(3.0, 0) == 1.0
    assert rising_factorial(3.0, 4) == 3 * 4 * 5 * 6
    assert rising_factorial(0.5, 3) == pytest.approx(0.5 * 1.5 * 2.5)
    assert rising_factorial(-2.0, 3) == 0.0
    assert rising_factorial(12.7, 12) == pytest.approx(float(mp.rf(12.7, 12)), rel=1e-14)


def test_binom():
    assert binom(10, 3) == 120.0
    assert binom(5, 0) == 1.0
