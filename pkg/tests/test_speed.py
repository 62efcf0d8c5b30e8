import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bbmpe import spectral
from bbmpe.environment import PeriodicRate
from bbmpe.errors import BracketError
from bbmpe.speed import golden_section, minimal_speed, rate_function, speed_to_lambda

from oracles import hill_speed, legendre_rate

# Hill's-method oracle for g = 0.5 + 0.25 sin(2 pi x), m = 1
HILL_NU_STAR = 1.001435973632549
HILL_LAMBDA_STAR = 1.0017007068468438
# Legendre transform of the Fourier eigenvalue on a grid (tests/oracles.py)
RATE_Z03_LAM1 = 0.8448686937843032
RATE_ZM1_LAM06 = 0.08008994864741348


def test_oracle_reproduces_frozen_speed():
    nu, lam = hill_speed()
    assert nu == pytest.approx(HILL_NU_STAR, abs=1e-12)
    assert lam == pytest.approx(HILL_LAMBDA_STAR, abs=1e-6)


def test_golden_section_quadratic():
    lo, hi, x, fx = golden_section(lambda s: (s - 1.3) ** 2 + 2, 0.0, 4.0, xtol=1e-10)
    assert hi - lo <= 1e-10
    # function values tie below ~sqrt(eps) in x
    assert x == pytest.approx(1.3, abs=1e-7)
    assert fx == pytest.approx(2.0, abs=1e-15)


@pytest.mark.parametrize("g0", [0.5, 2.0, 0.08])
def test_constant_speed_closed_form(g0):
    sol = minimal_speed(PeriodicRate.constant(g0), 1.0)
    assert sol.nu_star == pytest.approx(math.sqrt(2 * g0), abs=1e-8)
    assert sol.lambda_star == pytest.approx(math.sqrt(2 * g0), abs=1e-8)


def test_sinusoidal_speed_against_fourier_oracle(sin_g):
    sol = minimal_speed(sin_g, 1.0, n_grid=4096)
    assert abs(sol.nu_star - HILL_NU_STAR) < 1e-9
    assert abs(sol.lambda_star - HILL_LAMBDA_STAR) < 1e-6


def test_lambda_star_identity(sin_g):
    sol = minimal_speed(sin_g, 1.0)
    gp = spectral.gamma_prime(sin_g, 1.0, sol.lambda_star)
    assert abs(gp - sol.nu_star) / sol.nu_star < 1e-6


def test_speed_curve_minimum(sin_g):
    sol = minimal_speed(sin_g, 1.0)
    assert np.all(sol.f_curve[:, 1] >= sol.nu_star - 1e-12)


def test_speed_to_lambda_constant(const_g):
    sol = minimal_speed(const_g, 1.0)
    # gamma(l)/l = l/2 + 0.5/l = 1.25 at l = 0.5
    assert speed_to_lambda(sol, 1.25) == pytest.approx(0.5, abs=1e-9)


def test_speed_to_lambda_rejects_subcritical(const_g):
    sol = minimal_speed(const_g, 1.0)
    with pytest.raises(ValueError):
        speed_to_lambda(sol, 0.9)


def test_bracket_failure_reported():
    # a huge rate pushes the minimiser past the doubling limit
    with pytest.raises(BracketError):
        minimal_speed(PeriodicRate.constant(5000.0), 1.0)


@settings(max_examples=15, deadline=None)
@given(st.floats(1.02, 3.0))
def test_speed_to_lambda_inverts(ratio):
    g = PeriodicRate.sinusoidal(0.5, 0.25, n=256)
    sol = minimal_speed(g, 1.0, n_grid=128)
    nu = ratio * sol.nu_star
    lam = speed_to_lambda(sol, nu)
    assert 0 < lam < sol.lambda_star
    assert spectral.principal_eigenvalue(g, 1.0, lam, 128) / lam == pytest.approx(nu, abs=1e-9)


def test_rate_function_constant_closed_form(const_g):
    for z, lam in [(0.0, 1.0), (-1.0, 1.0), (0.7, 0.4)]:
        assert rate_function(z, const_g, 1.0, lam) == pytest.approx((z + lam) ** 2 / 2, abs=1e-9)


def test_rate_function_against_legendre_oracle(sin_g):
    assert abs(rate_function(0.3, sin_g, 1.0, 1.0, n_grid=2048) - RATE_Z03_LAM1) < 1e-8
    assert abs(rate_function(-1.0, sin_g, 1.0, 0.6, n_grid=2048) - RATE_ZM1_LAM06) < 1e-8


def test_rate_function_vanishes_at_law_of_large_numbers(sin_g):
    lam = 0.8
    z0 = -spectral.gamma_prime_adjoint(sin_g, 1.0, lam)
    assert abs(rate_function(z0, sin_g, 1.0, lam)) < 1e-10
    assert rate_function(z0 + 0.5, sin_g, 1.0, lam) > 0
