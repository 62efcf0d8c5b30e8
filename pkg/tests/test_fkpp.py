import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bbmpe.errors import DomainError, StabilityError
from bbmpe.fkpp import (Trajectory, WaveField, fit_front_speed, front_position, grid, heaviside, initial_field,
                        integrate, mckean_consistency, nonlinearity, pulsating_residual, sigmoid_data,
                        supercritical_experiment)
from bbmpe.offspring import OffspringLaw


@given(st.floats(0.0, 1.0))
def test_nonlinearity_binary(u):
    assert nonlinearity(OffspringLaw.binary(), u) == pytest.approx(u * u)


@given(st.floats(0.0, 1.0))
def test_nonlinearity_below_identity(u):
    law = OffspringLaw.from_probs([0.3, 0.4, 0.3])
    v = nonlinearity(law, u)
    assert v <= u + 1e-15
    assert v == pytest.approx(0.3 * u + 0.4 * u**2 + 0.3 * u**3)


def test_nonlinearity_domain():
    with pytest.raises(DomainError):
        nonlinearity(OffspringLaw.binary(), 1.5)


def test_grid_unit_shift():
    x = grid(3.2, 40)
    assert x[0] == -4 and x[-1] == 4
    assert (x[1] - x[0]) * 40 == pytest.approx(1.0)


@pytest.mark.parametrize("c", [0.0, 1.0])
def test_fixed_points(sin_g, binary, c):
    x = grid(5, 10)
    traj = integrate(WaveField(x, np.full_like(x, c)), sin_g, binary, 1.0, 1e-2, check_edges=False)
    assert np.allclose(traj.u[-1], c, rtol=0, atol=1e-12)


def test_spatially_constant_logistic(const_g, binary):
    # u' = (u^2 - u)/2 has 1/u - 1 = (1/u0 - 1) e^{t/2}
    # the Dirichlet ends keep u0; far from them the field stays flat
    x = grid(15, 10)
    u0 = 0.6
    traj = integrate(WaveField(x, np.full_like(x, u0)), const_g, binary, 2.0, 1e-3, check_edges=False)
    exact = 1.0 / (1.0 + (1.0 / u0 - 1.0) * math.e)
    assert np.allclose(traj.u[-1][np.abs(x) < 3], exact, atol=2e-4)


def test_comparison_principle(sin_g, binary):
    x = grid(30, 20)
    lo = integrate(initial_field(heaviside, x), sin_g, binary, 5.0, 1e-3, check_edges=False)
    hi = integrate(initial_field(lambda s: heaviside(s + 2.0), x), sin_g, binary, 5.0, 1e-3, check_edges=False)
    assert np.all(lo.u <= hi.u + 1e-12)
    assert np.all((lo.u >= 0) & (lo.u <= 1))


def test_front_moves_right(const_g, binary):
    x = grid(30, 20)
    traj = integrate(initial_field(heaviside, x), const_g, binary, 4.0, 1e-3)
    fronts = traj.fronts()
    assert fronts[0] == pytest.approx(0.0, abs=1e-12)
    # f(u) < u makes 0 the stable state, so the region near 0 invades and the front moves right
    assert np.all(np.diff(fronts) > 0)


def test_front_position_interpolates_and_translates():
    x = np.linspace(-5, 5, 101)
    f = WaveField(x, sigmoid_data(0.7)(x))
    assert front_position(f) == pytest.approx(0.0, abs=1e-12)
    g = WaveField(x, sigmoid_data(0.7)(x - 1.3))
    assert front_position(g) == pytest.approx(1.3, abs=5e-3)
    assert front_position(f.shifted(2.0)) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(DomainError):
        front_position(WaveField(x, np.zeros_like(x)))
    with pytest.raises(DomainError):
        front_position(WaveField(x, np.ones_like(x)))


def test_stability_bound(sin_g, binary):
    x = grid(5, 40)
    with pytest.raises(StabilityError):
        integrate(initial_field(heaviside, x), sin_g, binary, 1.0, dt=0.01)
    with pytest.raises(StabilityError):
        integrate(initial_field(heaviside, x), sin_g, binary, 1.0, dt=-1.0)


def test_domain_guard(const_g, binary):
    x = grid(8, 20)
    with pytest.raises(DomainError):
        integrate(initial_field(heaviside, x), const_g, binary, 6.0, 1e-3)
    with pytest.raises(DomainError):
        integrate(WaveField(x, np.full_like(x, 2.0)), const_g, binary, 1.0)


def test_missing_slice():
    traj = Trajectory(np.linspace(0, 1, 5), np.array([0.0, 1.0]), np.zeros((2, 5)), 1e-3)
    with pytest.raises(DomainError):
        traj.field(0.5)


def test_pulsating_residual_zero_field():
    x = grid(20, 20)
    traj = Trajectory(x, np.array([0.0, 1.0]), np.zeros((2, x.size)), 1e-3)
    assert pulsating_residual(traj, 1.0, 0.0) == 0.0
    with pytest.raises(DomainError):
        pulsating_residual(traj, -1.0, 0.0)


def test_pulsating_residual_exact_travelling_profile():
    x = grid(30, 40)
    prof = sigmoid_data(1.0)
    traj = Trajectory(x, np.array([0.0, 0.5]), np.vstack([prof(x), prof(x - 1.0)]), 1e-3)
    assert pulsating_residual(traj, 2.0, 0.0) < 1e-14


def test_speed_fit_recovers_log_corrected_front():
    t = np.linspace(1, 40, 157)
    lam = 1.3
    xf = 0.9 * t - 1.5 / lam * np.log(t) + 2.0
    fit = fit_front_speed(t, xf, lambda_star=lam)
    assert fit.corrected_speed == pytest.approx(0.9, abs=1e-10)
    assert fit.free_speed == pytest.approx(0.9, abs=1e-8)
    assert fit.free_log_coefficient == pytest.approx(1.5 / lam, abs=1e-7)
    assert fit.speed < 0.9
    with pytest.raises(DomainError):
        fit_front_speed(t[:2], xf[:2])


def test_supercritical_speed_constant_rate(const_g, binary):
    res = supercritical_experiment(const_g, binary, 0.5, T=20.0, points_per_unit=20)
    assert res["nu"] == pytest.approx(1.25, rel=1e-8)
    assert abs(res["front_speed"] - 1.25) < 0.02
    assert res["residual"] < 1e-3


def test_mckean_trivial_data(const_g, binary):
    res = mckean_consistency(lambda s: np.ones_like(np.asarray(s, dtype=float)), const_g, binary, 1.0, 0.0, n_runs=50)
    assert res["pde_value"] == pytest.approx(1.0)
    assert res["mc_value"] == 1.0 and res["passed"]
    with pytest.raises(DomainError):
        mckean_consistency(heaviside, const_g, binary, 4.0, 0.0)


def test_mckean_small_time(const_g, binary):
    res = mckean_consistency(sigmoid_data(1.0), const_g, binary, 1.0, 0.5, n_runs=4000, seed=2)
    assert res["passed"], res
