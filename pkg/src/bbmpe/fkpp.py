"""Periodic F-KPP equation ``u_t = u_xx/2 + g(x) (f(u) - u)`` and its travelling fronts.

Orientation is fixed: ``u -> 0`` at ``-inf`` and ``u -> 1`` at ``+inf``, so
fronts travel to the right. Diffusion is stepped by Crank–Nicolson and the
reaction explicitly; with ``dt (1/(2 dx^2) + max g) <= 1`` one step maps
``[0, 1]`` into itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import splu

from .bbm import SimConfig, simulate_batch
from .environment import PeriodicRate
from .errors import DomainError, SimulationError, StabilityError
from .offspring import OffspringLaw
from .spectral import principal_eigenvalue
from .speed import SpeedSolution, minimal_speed, speed_to_lambda

RANGE_TOL = 1e-9
EDGE_MARGIN = 5.0


def nonlinearity(law: OffspringLaw, u):
    """``f(u) = sum_k p_k u^(k+1)`` on ``[0, 1]``."""
    arr = np.asarray(u, dtype=float)
    if np.any(arr < -RANGE_TOL) or np.any(arr > 1 + RANGE_TOL):
        raise DomainError("u must lie in [0, 1]")
    out = law.generating(np.clip(arr, 0.0, 1.0))
    return float(out) if np.ndim(u) == 0 else out


@dataclass(frozen=True, eq=False)
class WaveField:
    x: np.ndarray
    u: np.ndarray
    time: float = 0.0

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def shifted(self, s: float) -> "WaveField":
        return WaveField(self.x + s, self.u, self.time)

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.x, self.u]), delimiter=",", header="x,u", comments="")


def heaviside(x):
    """``1_{x >= 0}`` with the midpoint value ``1/2`` at the jump."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, 1.0, np.where(x < 0, 0.0, 0.5))


def exponential_data(lam: float):
    """Initial data with ``1 - u0 = min(1, e^{-lam x})``; selects the wave of speed ``gamma(lam)/lam``."""
    return lambda x: 1.0 - np.minimum(1.0, np.exp(-lam * np.asarray(x, dtype=float)))


def sigmoid_data(width: float = 1.0):
    return lambda x: 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float) / width))


def grid(half_width: float, points_per_unit: int = 40) -> np.ndarray:
    """Uniform grid on ``[-L, L]`` with integer ``L`` so unit shifts are exact index shifts."""
    L = int(math.ceil(half_width))
    return np.linspace(-L, L, 2 * L * points_per_unit + 1)


def initial_field(u0, x) -> WaveField:
    return WaveField(np.asarray(x, dtype=float), np.asarray(u0(x), dtype=float), 0.0)


def domain_half_width(nu_star: float, T: float) -> float:
    return nu_star * T + 20.0


@dataclass(frozen=True, eq=False)
class Trajectory:
    x: np.ndarray
    times: np.ndarray
    u: np.ndarray  # (len(times), len(x))
    dt: float

    def field(self, t: float) -> WaveField:
        k = self.index(t)
        return WaveField(self.x, self.u[k], float(self.times[k]))

    def index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise DomainError(f"missing time slice t={t!r}")
        return k

    def fronts(self, level: float = 0.5) -> np.ndarray:
        return np.array([front_position(WaveField(self.x, u, t), level) for t, u in zip(self.times, self.u)])


class _Stepper:
    """Crank–Nicolson diffusion with explicit reaction on the interior of a Dirichlet grid."""

    def __init__(self, x, g: PeriodicRate, law: OffspringLaw):
        self.x = x
        self.dx = float(x[1] - x[0])
        self.g_grid = np.asarray(g(x), dtype=float)
        self.beta = float(self.g_grid.max())
        self.law = law
        n = x.size - 2
        self.n = n
        self.lap = sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], format="csc") / self.dx**2
        self._lu = {}

    def check(self, dt):
        if dt * (0.5 / self.dx**2 + self.beta) > 1.0 + 1e-12:
            raise StabilityError(
                f"dt={dt!r} breaks the positivity bound dt*(1/(2dx^2)+max g) <= 1 for dx={self.dx!r}")

    def _factor(self, dt):
        key = round(dt, 15)
        if key not in self._lu:
            A = sp.identity(self.n, format="csc") - 0.25 * dt * self.lap
            self._lu[key] = splu(A.tocsc())
        return self._lu[key]

    def step(self, u, dt):
        lu = self._factor(dt)
        ui = u[1:-1]
        left, right = u[0], u[-1]
        diff = np.empty_like(ui)
        diff[:] = -2 * ui
        diff[1:] += ui[:-1]
        diff[:-1] += ui[1:]
        diff[0] += left
        diff[-1] += right
        diff /= self.dx**2
        rhs = ui + 0.25 * dt * diff + dt * self.g_grid[1:-1] * (self.law.generating(ui) - ui)
        # boundary contributions of the implicit half
        rhs[0] += 0.25 * dt * left / self.dx**2
        rhs[-1] += 0.25 * dt * right / self.dx**2
        out = u.copy()
        out[1:-1] = lu.solve(rhs)
        lo, hi = out.min(), out.max()
        if lo < -RANGE_TOL or hi > 1 + RANGE_TOL:
            raise StabilityError(f"solution left [0, 1]: min={lo!r}, max={hi!r}")
        np.clip(out, 0.0, 1.0, out=out)
        return out


def _check_edges(x, u, t):
    zone = np.flatnonzero((u > 0.01) & (u < 0.99))
    if zone.size and (x[zone[0]] - x[0] < EDGE_MARGIN or x[-1] - x[zone[-1]] < EDGE_MARGIN):
        raise DomainError(f"front within {EDGE_MARGIN} of the domain boundary at t={t:.3f}")


def integrate(u0: WaveField, g: PeriodicRate, law: OffspringLaw, T: float, dt: float = 1e-3,
              record_times=None, check_edges: bool = True) -> Trajectory:
    """Integrate from ``u0`` to time ``T``, keeping the boundary values of ``u0``.

    Fields are stored at ``record_times`` (default: every 0.5 time units).
    Between consecutive record times the step is shortened uniformly so the
    records fall exactly on the requested times.
    """
    if not dt > 0:
        raise StabilityError("dt must be positive")
    x = u0.x
    if np.any(u0.u < -RANGE_TOL) or np.any(u0.u > 1 + RANGE_TOL):
        raise DomainError("initial data must lie in [0, 1]")
    if record_times is None:
        record_times = np.arange(0.0, T + 1e-12, 0.5)
    rec = np.unique(np.concatenate([[0.0], np.asarray(record_times, dtype=float), [T]]))
    rec = rec[rec <= T + 1e-12]
    stepper = _Stepper(x, g, law)
    stepper.check(dt)
    u = np.clip(u0.u.astype(float), 0.0, 1.0)
    out = [u.copy()]
    for a, b in zip(rec[:-1], rec[1:]):
        n = max(1, int(math.ceil((b - a) / dt - 1e-9)))
        h = (b - a) / n
        for _ in range(n):
            u = stepper.step(u, h)
        if check_edges:
            _check_edges(x, u, b)
        out.append(u.copy())
    return Trajectory(x, rec, np.array(out), dt)


def front_position(field: WaveField, level: float = 0.5) -> float:
    """Leftmost upcrossing of ``level``, linearly interpolated."""
    u = field.u
    above = u >= level
    idx = np.flatnonzero(~above[:-1] & above[1:])
    if above[0] and idx.size == 0:
        raise DomainError("no crossing: field is above the level everywhere")
    if idx.size == 0:
        raise DomainError("no crossing of the level")
    i = idx[0]
    x0, x1, u0, u1 = field.x[i], field.x[i + 1], u[i], u[i + 1]
    return float(x0 + (level - u0) / (u1 - u0) * (x1 - x0))


@dataclass(frozen=True)
class SpeedFit:
    speed: float
    corrected_speed: float
    free_speed: float
    free_log_coefficient: float
    window: tuple
    log_coefficient: float

    def to_dict(self):
        return dict(self.__dict__)


def fit_front_speed(times, fronts, window=None, lambda_star: float | None = None) -> SpeedFit:
    """Least-squares speeds of a front trajectory over ``window`` (default: second half).

    ``speed`` is the plain slope. ``corrected_speed`` removes the logarithmic
    delay ``-(3/(2 lam*)) log t`` of fronts started from compactly supported
    or step data before fitting. ``free_speed`` fits ``a + nu t - c log t``
    with ``c`` free.
    """
    times = np.asarray(times, dtype=float)
    fronts = np.asarray(fronts, dtype=float)
    if window is None:
        window = (times[-1] / 2, times[-1])
    sel = (times >= window[0] - 1e-12) & (times <= window[1] + 1e-12)
    t, xf = times[sel], fronts[sel]
    if t.size < 3:
        raise DomainError("too few front samples in the fit window")
    slope = np.polyfit(t, xf, 1)[0]
    c = 1.5 / lambda_star if lambda_star else 0.0
    corrected = np.polyfit(t, xf + c * np.log(t), 1)[0] if lambda_star else float("nan")
    X = np.column_stack([np.ones_like(t), t, -np.log(t)])
    coef = np.linalg.lstsq(X, xf, rcond=None)[0]
    return SpeedFit(float(slope), float(corrected), float(coef[1]), float(coef[2]), tuple(window), c)


def pulsating_residual(traj: Trajectory, nu: float, t: float | None = None, margin: float = EDGE_MARGIN) -> float:
    """``max_x |u(t + 1/nu, x) - u(t, x - 1)|`` over the interior of the grid.

    ``t`` defaults to the last recorded time ``T - 1/nu``.
    """
    if not nu > 0:
        raise DomainError("nu must be positive")
    if t is None:
        t = traj.times[-1] - 1.0 / nu
    a = traj.u[traj.index(t)]
    b = traj.u[traj.index(t + 1.0 / nu)]
    x = traj.x
    dx = x[1] - x[0]
    shift = 1.0 / dx
    k = int(round(shift))
    if abs(shift - k) < 1e-9:
        a_shift = np.empty_like(a)
        a_shift[k:] = a[:-k]
        a_shift[:k] = a[0]
    else:
        a_shift = np.interp(x - 1.0, x, a)
    inner = (x >= x[0] + margin + 1) & (x <= x[-1] - margin)
    return float(np.max(np.abs(b[inner] - a_shift[inner])))


@dataclass
class FrontRun:
    trajectory: Trajectory
    fronts: np.ndarray
    fit: SpeedFit
    speed: SpeedSolution
    residual: float | None = None
    extra: dict = field(default_factory=dict)


def front_experiment(g: PeriodicRate, law: OffspringLaw, T: float = 40.0, dt: float = 1e-3,
                     points_per_unit: int = 40, record_step: float = 0.25, speed: SpeedSolution | None = None,
                     u0=heaviside, probe_speeds=()) -> FrontRun:
    """Integrate step data on ``[-(nu* T + 20), nu* T + 20]`` and fit the front speed over ``[T/2, T]``.

    The pulsating residual is evaluated at the plain fitted speed and, for
    each speed in ``probe_speeds``, stored in ``extra``.
    """
    speed = speed or minimal_speed(g, law.mean)
    x = grid(domain_half_width(speed.nu_star, T), points_per_unit)
    rec = list(np.arange(0.0, T + 1e-12, record_step))
    rec_extra = [T - 1.0 / nu for nu in probe_speeds]
    # the fitted speed is unknown before the run: integrate to T, fit, then add the slice at T - 1/nu_fit
    traj = integrate(initial_field(u0, x), g, law, T, dt, record_times=rec + rec_extra)
    fronts = traj.fronts()
    fit = fit_front_speed(traj.times[traj.times > 0], fronts[traj.times > 0], (T / 2, T), speed.lambda_star)
    # final slice at T - 1/nu_fit, restarting from the nearest earlier record
    t_need = T - 1.0 / fit.speed
    k = int(np.searchsorted(traj.times, t_need) - 1)
    start = WaveField(traj.x, traj.u[k], traj.times[k])
    tail = integrate(start, g, law, t_need - traj.times[k], dt, record_times=[t_need - traj.times[k]])
    times = np.append(traj.times, t_need)
    u = np.vstack([traj.u, tail.u[-1]])
    order = np.argsort(times, kind="stable")
    full = Trajectory(traj.x, times[order], u[order], dt)
    run = FrontRun(full, fronts, fit, speed, pulsating_residual(full, fit.speed, t_need))
    for nu in probe_speeds:
        run.extra[f"residual_at_{nu!r}"] = pulsating_residual(full, nu, T - 1.0 / nu)
    return run


def supercritical_experiment(g: PeriodicRate, law: OffspringLaw, lam: float, T: float = 40.0, dt: float = 1e-3,
                             points_per_unit: int = 40) -> dict:
    """Integrate ``1 - u0 = min(1, e^{-lam x})`` and test the pulsating relation at ``nu = gamma(lam)/lam``."""
    nu = principal_eigenvalue(g, law.mean, lam) / lam
    x = grid(nu * T + 20.0 + 10.0 / lam, points_per_unit)
    rec = [T / 2, T - 1.0 / nu, T]
    traj = integrate(initial_field(exponential_data(lam), x), g, law, T, dt, record_times=rec, check_edges=False)
    res = pulsating_residual(traj, nu, T - 1.0 / nu)
    xf = [front_position(traj.field(t)) for t in (T / 2, T)]
    return {"lambda": lam, "nu": nu, "residual": res, "front_speed": (xf[1] - xf[0]) / (T / 2)}


def mckean_consistency(u0, g: PeriodicRate, law: OffspringLaw, t: float, x: float, n_runs: int = 10_000,
                       seed: int = 0, dt: float = 1e-3, points_per_unit: int = 40,
                       speed: SpeedSolution | None = None) -> dict:
    """PDE value ``u(t, x)`` against the Monte Carlo mean of ``prod_u u0(X_u(t))`` from ``x``.

    The PDE error is estimated as the change between ``points_per_unit`` and
    half that resolution, and added in quadrature to the Monte Carlo SE.
    """
    if t > 3:
        raise DomainError("mckean_consistency requires t <= 3")
    speed = speed or minimal_speed(g, law.mean)
    L = domain_half_width(speed.nu_star, t) + abs(x)

    def pde(ppu):
        xs = grid(L, ppu)
        traj = integrate(initial_field(u0, xs), g, law, t, min(dt, 0.9 / (0.5 * ppu**2 + g.beta)),
                         record_times=[t], check_edges=False)
        return float(np.interp(x, xs, traj.u[-1]))

    fine, coarse = pde(points_per_unit), pde(points_per_unit // 2)
    pde_err = abs(fine - coarse)
    run = simulate_batch(SimConfig(g, law, x, t, t, seed), n_runs, tag="mckean")
    if run.truncated:
        raise SimulationError("population cap hit in the McKean simulation")
    snap = run[-1]
    with np.errstate(divide="ignore"):
        logs = np.log(np.asarray(u0(snap.positions), dtype=float))
    prod = np.exp(np.atleast_1d(snap.per_replicate(logs)))
    prod = np.nan_to_num(prod, nan=0.0)
    mc = float(prod.mean())
    se = float(prod.std(ddof=1) / math.sqrt(prod.size))
    denom = math.sqrt(se**2 + pde_err**2)
    z = abs(fine - mc) / denom if denom > 0 else (0.0 if fine == mc else math.inf)
    return {"t": t, "x": x, "pde_value": fine, "pde_error": pde_err, "mc_value": mc, "mc_se": se, "z": z,
            "passed": z < 3}


def wave_from_martingale(g: PeriodicRate, law: OffspringLaw, nu: float, t_grid, x_grid, T_proxy: float = 20.0,
                         n_runs: int = 500, seed: int = 0, speed: SpeedSolution | None = None,
                         proxy_tol: float = 0.1) -> dict:
    """Supercritical pulsating wave ``u(t, x) = E_x exp(-e^{gamma t} W(lam))`` from simulated ``W_{T_proxy}``.

    ``lam = speed_to_lambda(nu)``. Each ``x`` is simulated independently; the
    proxy is rejected if the KS distance between ``W_{T/2}`` and ``W_T``
    exceeds ``proxy_tol``. Returns the table with Monte Carlo SEs.
    """
    from scipy import stats

    from .spectral import solve

    if T_proxy < 20:
        raise DomainError("T_proxy must be at least 20")
    speed = speed or minimal_speed(g, law.mean)
    lam = speed_to_lambda(speed, nu)
    spec = solve(g, law.mean, lam, derivatives=False)
    t_grid = np.asarray(t_grid, dtype=float)
    x_grid = np.asarray(x_grid, dtype=float)
    table = np.empty((t_grid.size, x_grid.size))
    se = np.empty_like(table)
    ks = []
    for j, x in enumerate(x_grid):
        cfg = SimConfig(g, law, float(x), T_proxy, T_proxy / 2, seed)
        run = simulate_batch(cfg, n_runs, tag=f"wave_x{j}")
        if run.truncated:
            raise SimulationError("population cap hit in the wave proxy")
        W = []
        for snap in run[1:]:
            vals = np.exp(-lam * snap.positions - spec.gamma * snap.time) * spec.psi_at(snap.positions)
            W.append(np.atleast_1d(snap.per_replicate(vals)))
        d = stats.ks_2samp(W[0], W[1]).statistic
        ks.append(float(d))
        if d > proxy_tol:
            raise SimulationError(f"proxy W_T not settled at x={x!r}: KS distance {d:.3f}")
        for i, t in enumerate(t_grid):
            v = np.exp(-math.exp(spec.gamma * t) * W[1])
            table[i, j] = v.mean()
            se[i, j] = v.std(ddof=1) / math.sqrt(v.size)
    return {"lambda": lam, "nu": nu, "t_grid": t_grid, "x_grid": x_grid, "u": table, "se": se, "proxy_ks": ks}
