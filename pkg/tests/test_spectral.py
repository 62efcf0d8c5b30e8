import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bbmpe import spectral
from bbmpe.environment import PeriodicRate
from bbmpe.errors import SpectralError

from oracles import hill_eigenvalue

# Hill's-method values for g = 0.5 + 0.25 sin(2 pi x), m = 1 (tests/oracles.py)
HILL_GAMMA = {0.5: 0.6265439321359264, 1.0: 1.0014374195792033, 2.0: 2.501126538388504, -1.3: 1.3463516316595006}


def test_hill_oracle_reproduces_frozen_values():
    for lam, val in HILL_GAMMA.items():
        assert hill_eigenvalue(lam) == pytest.approx(val, abs=1e-13)


@pytest.mark.parametrize("lam", sorted(HILL_GAMMA))
def test_sinusoidal_eigenvalue_matches_fourier_oracle(sin_g, lam):
    assert abs(spectral.principal_eigenvalue(sin_g, 1.0, lam, 512) - HILL_GAMMA[lam]) < 5e-8
    assert abs(spectral.principal_eigenvalue(sin_g, 1.0, lam, 4096) - HILL_GAMMA[lam]) < 1e-9


def test_second_order_convergence(sin_g):
    errs = [abs(spectral.principal_eigenvalue(sin_g, 1.0, 2.0, n) - HILL_GAMMA[2.0]) for n in (256, 512, 1024)]
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(3.5 < r < 4.5 for r in ratios)


def test_constant_closed_form(const_g):
    for lam in (0.0, 0.3, 1.0, 2.7):
        gam, psi = spectral.principal_eigenpair(const_g, 1.0, lam)
        assert gam == pytest.approx(lam**2 / 2 + 0.5, abs=1e-12)
        assert np.max(np.abs(psi - 1)) < 1e-12


def test_dense_and_inverse_agree(sin_g):
    g1, p1 = spectral.principal_eigenpair(sin_g, 1.0, 0.8, 128, method="inverse")
    g2, p2 = spectral.principal_eigenpair(sin_g, 1.0, 0.8, 128, method="dense")
    assert abs(g1 - g2) < 1e-10
    assert np.max(np.abs(p1 - p2)) < 1e-9


def test_psi_normalised_and_positive(sin_g):
    spec = spectral.solve(sin_g, 1.0, 0.7)
    assert spec.psi.mean() == pytest.approx(1.0, abs=1e-13)
    assert spec.psi.min() > 0
    assert abs(spec.psi_lambda.mean()) < 1e-12


def test_psi_lambda_matches_difference_quotient(sin_g):
    lam, d = 0.9, 1e-4
    spec = spectral.solve(sin_g, 1.0, lam)
    _, up = spectral.principal_eigenpair(sin_g, 1.0, lam + d)
    _, dn = spectral.principal_eigenpair(sin_g, 1.0, lam - d)
    assert np.max(np.abs(spec.psi_lambda - (up - dn) / (2 * d))) < 1e-7


def test_gamma_prime_fd_matches_adjoint(sin_g):
    for lam in (-1.0, 1e-7, 0.4, 1.9):
        a = spectral.gamma_prime(sin_g, 1.0, lam)
        b = spectral.gamma_prime_adjoint(sin_g, 1.0, lam)
        assert abs(a - b) < 1e-8


def test_gamma_prime_at_zero_vanishes(sin_g):
    assert abs(spectral.gamma_prime_adjoint(sin_g, 1.0, 0.0)) < 1e-12


def test_psi_lambda_refused_near_zero(sin_g):
    with pytest.raises(SpectralError):
        spectral.solve(sin_g, 1.0, 5e-5)


def test_barrier_function_properties(sin_g):
    spec = spectral.solve(sin_g, 1.0, 1.1)
    x = np.linspace(-3, 3, 97)
    assert np.allclose(spec.h_at(x + 1), spec.h_at(x) + 1, atol=1e-12)
    assert spec.h_prime.min() > 0
    assert spec.h_prime.min() >= spectral.h_prime_lower_bound(spec)
    hp_num = (spec.h_at(x + 1e-5) - spec.h_at(x - 1e-5)) / 2e-5
    assert np.max(np.abs(hp_num - spec.h_prime_at(x))) < 1e-5
    for y in (-2.3, 0.0, 0.77):
        assert spec.h_at(spec.h_inverse(y)) == pytest.approx(y, abs=1e-10)


def test_constant_barrier_is_identity(const_g):
    spec = spectral.solve(const_g, 1.0, 1.0)
    x = np.linspace(-2, 2, 11)
    assert np.max(np.abs(spec.h_at(x) - x)) < 1e-12
    assert spectral.gauge_constant(spec) == pytest.approx(1.0, abs=1e-12)


def test_residuals_small(sin_g):
    spec = spectral.solve(sin_g, 1.0, 1.3)
    assert spectral.eigen_residual(spec) < 1e-8
    assert spectral.psi_lambda_residual(spec) < 1e-6


def test_json_round_trip(sin_g):
    spec = spectral.solve(sin_g, 1.0, 0.6)
    back = spectral.SpectralSolution.from_json(spec.to_json())
    assert back.gamma == spec.gamma and back.lam == spec.lam
    assert np.array_equal(back.psi, spec.psi) and np.array_equal(back.h_prime, spec.h_prime)


def test_feynman_kac_identity(sin_g):
    spec = spectral.solve(sin_g, 1.0, 1.0, derivatives=False)
    est, se = spectral.feynman_kac_residual(spec, 1.0, 0.3, n_paths=20_000, seed=1)
    assert abs(est - spec.psi_at(0.3)) / se < 3
    assert spectral.feynman_kac_residual(spec, 0.0, 0.3) == (pytest.approx(float(spec.psi_at(0.3))), 0.0)


positive_samples = st.lists(st.floats(0.05, 3.0), min_size=8, max_size=24)


@settings(max_examples=25, deadline=None)
@given(positive_samples, st.floats(0.05, 3.0))
def test_evenness_and_sandwich(samples, lam):
    g = PeriodicRate(np.array(samples))
    gp = spectral.principal_eigenvalue(g, 1.0, lam, 64)
    gm = spectral.principal_eigenvalue(g, 1.0, -lam, 64)
    assert abs(gp - gm) < 1e-9 * max(1.0, abs(gp))
    tol = 1e-9 * max(1.0, abs(gp))
    assert lam**2 / 2 + g.alpha - tol <= gp <= lam**2 / 2 + g.beta + tol


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 1.0), st.floats(0.0, 0.95), st.floats(0.1, 3.0), st.floats(0.0, 6.283))
def test_positivity_for_random_sinusoids(offset, frac, lam, phase):
    g = PeriodicRate.sinusoidal(offset, frac * offset, n=256, phase=phase)
    spec = spectral.solve(g, 1.0, lam, n_grid=256)
    assert spec.psi.min() > 0
    assert spec.h_prime.min() > 0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 2.5))
def test_gamma_convex(lam):
    g = PeriodicRate.sinusoidal(0.5, 0.25, n=256)
    d = 0.05
    vals = [spectral.principal_eigenvalue(g, 1.0, s, 128) for s in (lam - d, lam, lam + d)]
    assert vals[0] + vals[2] - 2 * vals[1] > 0
