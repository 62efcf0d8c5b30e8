"""Minimal wave speed, speed-to-lambda map and the spine large-deviation rate function."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .environment import PeriodicRate
from .errors import BracketError
from .spectral import gamma_prime, gamma_prime_adjoint, principal_eigenvalue

INV_PHI = (math.sqrt(5) - 1) / 2
LAMBDA_MAX = 64.0


def golden_section(f, a: float, b: float, xtol: float = 1e-10, maxiter: int = 500):
    """Minimise a unimodal ``f`` on ``[a, b]``.

    Returns
    -------
    lo, hi : float
        Final bracket, ``hi - lo <= xtol`` unless ``maxiter`` ran out.
    x, fx : float
        Best point seen and its value.
    """
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if b - a <= xtol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    x, fx = (c, fc) if fc < fd else (d, fd)
    return a, b, x, fx


@dataclass(frozen=True)
class SpeedSolution:
    nu_star: float
    lambda_star: float
    f_curve: np.ndarray  # columns: lambda, gamma(lambda)/lambda
    g: PeriodicRate
    m: float
    n_grid: int = 512

    def to_dict(self) -> dict:
        return {"nu_star": self.nu_star, "lambda_star": self.lambda_star}


def _speed_ratio(g, m, n_grid):
    return lambda lam: principal_eigenvalue(g, m, lam, n_grid) / lam


def minimal_speed(g: PeriodicRate, m: float, tol: float = 1e-6, n_grid: int = 512, n_curve: int = 64) -> SpeedSolution:
    """Minimal speed ``nu* = min_{lam>0} gamma(lam)/lam`` and its minimiser ``lam*``.

    Golden-section search on a bracket grown from ``[1e-3, 8]`` by doubling
    the right end until the slope of ``gamma(lam)/lam`` is positive there.
    Golden section stalls once values differ by rounding only (a few 1e-8 in
    ``lam``); the last bracket is polished by bisection on the sign of
    ``lam gamma'(lam) - gamma(lam)`` with ``gamma'`` taken from the adjoint
    formula, which keeps the finite-difference ``gamma'`` free as a check.
    """
    if not 0 < tol <= 1e-3:
        raise ValueError("tol must lie in (0, 1e-3]")
    f = _speed_ratio(g, m, n_grid)
    slope = lambda lam: lam * gamma_prime_adjoint(g, m, lam, n_grid) - principal_eigenvalue(g, m, lam, n_grid)
    lo, hi = 1e-3, 8.0
    while slope(hi) <= 0:
        lo, hi = hi, 2 * hi
        if hi > LAMBDA_MAX:
            raise BracketError(f"no sign change of the speed slope below lambda={LAMBDA_MAX}")
    a, b, x, _ = golden_section(f, lo, hi, xtol=1e-7)
    if slope(a) < 0 < slope(b):
        x = brentq(slope, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    lam_star = float(x)
    nu_star = float(f(lam_star))
    fprime = (gamma_prime(g, m, lam_star, n_grid) - nu_star) / lam_star
    if abs(fprime) > tol:
        raise BracketError(f"|f'(lambda*)| = {abs(fprime):.3g} exceeds tol")
    lams = np.linspace(max(0.05, lam_star / 8), 3 * lam_star, n_curve)
    curve = np.column_stack([lams, [f(s) for s in lams]])
    return SpeedSolution(nu_star=nu_star, lambda_star=lam_star, f_curve=curve, g=g, m=m, n_grid=n_grid)


def speed_to_lambda(sol: SpeedSolution, nu: float) -> float:
    """Unique ``lam in (0, lam*)`` with ``gamma(lam)/lam = nu`` for a supercritical ``nu``."""
    if not nu > sol.nu_star:
        raise ValueError(f"nu={nu!r} is not above nu*={sol.nu_star!r}; no supercritical preimage")
    f = _speed_ratio(sol.g, sol.m, sol.n_grid)
    F = lambda lam: f(lam) - nu
    hi = sol.lambda_star
    if F(hi) >= 0:
        # nu is within rounding of nu*: lam* itself satisfies the tolerance
        if abs(F(hi)) <= 1e-9:
            return float(hi)
        raise BracketError("nu too close to nu* to resolve")
    # gamma(lam)/lam blows up like gamma(0)/lam at the origin
    lo = hi / 2
    while F(lo) <= 0:
        lo /= 2
        if lo < 1e-12:
            raise BracketError("could not bracket the supercritical lambda")
    lam = brentq(F, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(F(lam)) > 1e-9:
        raise BracketError("root of gamma(lam)/lam = nu not resolved to 1e-9")
    return float(lam)


def rate_function(z: float, g: PeriodicRate, m: float, lam: float, n_grid: int = 512) -> float:
    """Rate function ``I(z)`` of ``Y_t/t`` under the lam-tilted spine measure.

    ``eta_z`` solves ``gamma'(lam - eta_z) = -z``; then
    ``I(z) = -eta_z gamma'(lam - eta_z) - [gamma(lam - eta_z) - gamma(lam)]``.
    """
    gp = lambda s: gamma_prime_adjoint(g, m, s, n_grid)
    # root in s = lam - eta of gp(s) + z, gp strictly increasing, |gp(s)| >= |s| - const
    width = abs(z) + 2 * math.sqrt(2 * m * (g.beta - g.alpha)) + 1.0
    lo, hi = -width, width
    for _ in range(60):
        if gp(lo) + z < 0 < gp(hi) + z:
            break
        lo, hi = 2 * lo, 2 * hi
    else:
        raise BracketError("root-find bracket exhausted for eta_z")
    s = brentq(lambda s: gp(s) + z, lo, hi, xtol=1e-13)
    eta = lam - s
    return float(-eta * gp(s) - (principal_eigenvalue(g, m, s, n_grid) - principal_eigenvalue(g, m, lam, n_grid)))
