"""Spine under the lambda-tilted measure, the size-biased tree and their self-checks.

Under the tilted measure the spine is the diffusion
``dY = (psi_x/psi - lam)(Y) dt + dB``; it branches at rate ``(m+1) g`` into
``1 + A`` children with ``P(A = k) = (k+1) p_k / (m+1)``, and every child
other than the continuing spine starts an ordinary branching Brownian motion.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .bbm import Population, SimConfig, simulate_batch
from .errors import DomainError, InsufficientSamplesError, SimulationError
from .offspring import OffspringLaw
from .rng import stream
from .spectral import SpectralSolution


@dataclass(frozen=True, eq=False)
class SpinePath:
    """A batch of spine paths recorded at checkpoint times.

    ``Y``, ``M`` and ``qv`` have shape ``(len(times), n_paths)``. Fission
    events, when tracked, are flat arrays tagged by ``fission_path``.
    ``cell_intensity`` holds the accumulated compensator
    ``int (m+1) g(Y_s) ds`` split by the cell of ``Y_s mod 1``.
    """

    times: np.ndarray
    Y: np.ndarray
    M: np.ndarray
    qv: np.ndarray
    lam: float
    gamma_prime: float
    fission_times: np.ndarray | None = None
    fission_positions: np.ndarray | None = None
    fission_path: np.ndarray | None = None
    offspring_counts: np.ndarray | None = None
    cell_intensity: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.Y.shape[1]

    def to_csv(self, path, index: int = 0) -> None:
        """Write ``t,Y,M,qv`` rows for one path."""
        with open(path, "w") as fh:
            fh.write("t,Y,M,qv\n")
            for k, t in enumerate(self.times):
                fh.write(f"{float(t)!r},{float(self.Y[k, index])!r},{float(self.M[k, index])!r},{float(self.qv[k, index])!r}\n")


def _checkpoint_steps(horizon, dt, checkpoints):
    n_steps = max(1, int(round(horizon / dt)))
    dt = horizon / n_steps
    if checkpoints is None:
        checkpoints = [horizon]
    cps = np.unique(np.concatenate([[0.0], np.asarray(checkpoints, dtype=float)]))
    if cps[-1] > horizon + 1e-12 or cps[0] < 0:
        raise DomainError("checkpoints must lie in [0, horizon]")
    steps = np.round(cps / dt).astype(int)
    return n_steps, dt, cps, steps


def simulate_spine(spec: SpectralSolution, x0: float, horizon: float, dt: float = 1e-3, seed: int = 0,
                   n_paths: int = 1, checkpoints=None, law: OffspringLaw | None = None, n_cells: int = 10,
                   tag: str = "spine") -> SpinePath:
    """Euler–Maruyama paths of the tilted spine, with ``M_t`` and ``<M>_t``.

    ``M_t = gamma' t + h(Y_t) - h(Y_0)`` and ``<M>_t = int h'(Y_s)^2 ds``
    (trapezoid rule). If ``law`` is given, fissions along the spine are
    generated by thinning a rate ``(m+1) beta`` clock, accepting with
    probability ``g(Y)/beta`` at the linearly interpolated position, and each
    fission draws its surplus from the size-biased law.
    """
    if spec.h is None:
        raise DomainError("spine needs h, i.e. a spectral solution with lambda > 0")
    if not dt > 0 or dt > 1e-2:
        raise DomainError("dt must lie in (0, 1e-2]")
    n_steps, dt, cps, steps = _checkpoint_steps(horizon, dt, checkpoints)
    rng = stream(seed, tag)
    sq = math.sqrt(dt)
    y = np.full(n_paths, float(x0))
    h0 = float(spec.h_at(x0))
    hp2 = spec.h_prime_at(y) ** 2
    qv = np.zeros(n_paths)
    out_Y = np.empty((cps.size, n_paths))
    out_qv = np.empty_like(out_Y)
    out_Y[0], out_qv[0] = y, qv
    track = law is not None
    if track:
        g, m = spec.g, law.mean
        if abs(m - spec.m) > 1e-12:
            raise DomainError("offspring law mean differs from the spectral solution's m")
        rate = (m + 1) * g.beta
        biased = law.size_biased()
        clock = rng.exponential(1.0 / rate, n_paths)
        f_t, f_x, f_p = [], [], []
        cells = np.zeros(n_cells)
    j = 1
    for k in range(1, n_steps + 1):
        y_new = y + spec.drift_at(y) * dt + sq * rng.standard_normal(n_paths)
        hp2_new = spec.h_prime_at(y_new) ** 2
        qv += 0.5 * dt * (hp2 + hp2_new)
        if track:
            t0 = (k - 1) * dt
            cells += np.bincount((np.mod(y, 1.0) * n_cells).astype(int) % n_cells,
                                 weights=(m + 1) * g(y) * dt, minlength=n_cells)
            hit = np.flatnonzero(clock < t0 + dt)
            while hit.size:
                frac = (clock[hit] - t0) / dt
                pos = y[hit] + frac * (y_new[hit] - y[hit])
                ok = rng.random(hit.size) * g.beta < g(pos)
                f_t.append(clock[hit][ok])
                f_x.append(pos[ok])
                f_p.append(hit[ok])
                clock[hit] += rng.exponential(1.0 / rate, hit.size)
                hit = hit[clock[hit] < t0 + dt]
        y, hp2 = y_new, hp2_new
        while j < steps.size and steps[j] == k:
            out_Y[j], out_qv[j] = y, qv
            j += 1
    M = spec.gamma_prime * cps[:, None] + spec.h_at(out_Y) - h0
    kw = {}
    if track:
        path_idx = np.concatenate(f_p).astype(np.int64) if f_p else np.empty(0, dtype=np.int64)
        kw = dict(
            fission_times=np.concatenate(f_t) if f_t else np.empty(0),
            fission_positions=np.concatenate(f_x) if f_x else np.empty(0),
            fission_path=path_idx,
            offspring_counts=biased.sample(rng, path_idx.size),
            cell_intensity=cells,
        )
    return SpinePath(cps, out_Y, M, out_qv, spec.lam, spec.gamma_prime, **kw)


def spine_checks(path: SpinePath, spec: SpectralSolution, n_se: float = 3.0) -> dict:
    """SLLN at the last checkpoint, zero mean of ``M`` at each checkpoint, and the ``<M>_t/t`` band."""
    t = path.times[-1]
    n = path.n_paths
    ratio = path.Y[-1] / t
    se = ratio.std(ddof=1) / math.sqrt(n)
    slln_z = abs(ratio.mean() + spec.gamma_prime) / se
    m_rows = []
    for k in range(1, path.times.size):
        mk = path.M[k]
        s = mk.std(ddof=1) / math.sqrt(n)
        m_rows.append({"t": float(path.times[k]), "mean": float(mk.mean()), "se": float(s), "z": float(abs(mk.mean()) / s)})
    lo, hi = float(spec.h_prime.min() ** 2), float(spec.h_prime.max() ** 2)
    rate = path.qv[1:] / path.times[1:, None]
    tol = 1e-9
    return {
        "slln_mean": float(ratio.mean()), "slln_se": float(se), "slln_target": -float(spec.gamma_prime),
        "slln_z": float(slln_z), "slln_pass": bool(slln_z < n_se),
        "M_rows": m_rows, "M_pass": all(r["z"] < n_se for r in m_rows),
        "qv_band": (lo, hi), "qv_rate_min": float(rate.min()), "qv_rate_max": float(rate.max()),
        "qv_pass": bool(rate.min() >= lo - tol and rate.max() <= hi + tol and np.all(np.diff(path.qv, axis=0) >= 0)),
    }


def fission_intensity_check(path: SpinePath, min_expected: float = 5.0) -> dict:
    """Chi-square test of spine fission counts per cell against ``int (m+1) g(Y) ds``.

    Conditional on the spine path the fissions form a Poisson process, so
    cell counts are independent Poisson variables with the accumulated
    compensators as means. Cells with expected count below ``min_expected``
    are merged with their neighbour.
    """
    if path.fission_positions is None or path.cell_intensity is None:
        raise DomainError("spine was simulated without fission tracking")
    if path.fission_positions.size == 0:
        raise InsufficientSamplesError("no fissions recorded")
    n_cells = path.cell_intensity.size
    obs = np.bincount((np.mod(path.fission_positions, 1.0) * n_cells).astype(int) % n_cells, minlength=n_cells)
    exp_ = path.cell_intensity.copy()
    o, e = [], []
    acc_o = acc_e = 0.0
    for oi, ei in zip(obs, exp_):
        acc_o += oi
        acc_e += ei
        if acc_e >= min_expected:
            o.append(acc_o)
            e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        if e:
            o[-1] += acc_o
            e[-1] += acc_e
        else:
            o.append(acc_o)
            e.append(acc_e)
    o, e = np.array(o), np.array(e)
    chi2 = float(((o - e) ** 2 / e).sum())
    p = float(stats.chi2.sf(chi2, o.size))
    return {"observed": o.tolist(), "expected": e.tolist(), "chi2": chi2, "df": int(o.size), "p_value": p,
            "passed": p > 0.01}


def offspring_frequency_check(path: SpinePath, law: OffspringLaw, min_expected: float = 5.0) -> dict:
    """Chi-square goodness of fit of spine offspring surpluses to the size-biased law."""
    if path.offspring_counts is None:
        raise DomainError("spine was simulated without fission tracking")
    n = path.offspring_counts.size
    if n == 0:
        raise InsufficientSamplesError("no fissions recorded")
    q = law.size_biased().probs
    obs = np.bincount(path.offspring_counts, minlength=q.size)[: q.size].astype(float)
    exp_ = n * q
    keep = exp_ > 0
    obs, exp_ = obs[keep], exp_[keep]
    # merge the sparse tail into one bin
    small = exp_ < min_expected
    if small.any() and (~small).any():
        obs = np.append(obs[~small], obs[small].sum())
        exp_ = np.append(exp_[~small], exp_[small].sum())
    if obs.size < 2:
        return {"chi2": 0.0, "df": 0, "p_value": 1.0, "passed": True, "note": "degenerate size-biased law"}
    res = stats.chisquare(obs, exp_)
    return {"observed": obs.tolist(), "expected": exp_.tolist(), "chi2": float(res.statistic), "df": int(obs.size - 1),
            "p_value": float(res.pvalue), "passed": bool(res.pvalue > 0.01)}


@dataclass(frozen=True, eq=False)
class SizeBiasedForest:
    """Size-biased trees at time ``horizon``: spine path plus all off-spine particles.

    ``positions``/``replicate`` list every particle alive at ``horizon``,
    spine included (``is_spine`` marks it). Off-spine subtrees are never
    barrier-killed.
    """

    horizon: float
    spine: SpinePath
    positions: np.ndarray
    replicate: np.ndarray
    is_spine: np.ndarray
    n_trees: int
    truncated: bool
    tree: list | None = None

    def per_tree(self, values) -> np.ndarray:
        return np.bincount(self.replicate, weights=values, minlength=self.n_trees)

    def to_ndjson(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.tree or []:
                fh.write(json.dumps(rec) + "\n")


def size_biased_tree(spec: SpectralSolution, law: OffspringLaw, x0: float, horizon: float, seed: int = 0,
                     n_trees: int = 1, dt: float = 1e-3, max_particles: int = 2_000_000,
                     record_tree: bool = False) -> SizeBiasedForest:
    """Sample ``n_trees`` size-biased trees up to ``horizon``.

    The spine is simulated under the tilted measure with fissions at rate
    ``(m+1) g``; each fission adds ``A`` ordinary particles at the spine's
    space-time point which then evolve as plain branching Brownian motion.
    """
    if horizon > 10:
        raise DomainError("size-biased trees are limited to horizon <= 10")
    path = simulate_spine(spec, x0, horizon, dt, seed, n_trees, law=law, tag="size_biased_spine")
    pop = Population(spec.g, law, stream(seed, "size_biased_subtrees"), n_replicates=n_trees,
                     max_particles=max_particles, record_tree=record_tree)
    counts = path.offspring_counts
    rep = np.repeat(path.fission_path, counts)
    pop.add(np.repeat(path.fission_positions, counts), np.repeat(path.fission_times, counts), rep)
    ok = pop.advance(horizon)
    if not ok:
        raise SimulationError("population cap hit while growing off-spine subtrees")
    positions = np.concatenate([pop.pos, path.Y[-1]])
    replicate = np.concatenate([pop.rep, np.arange(n_trees)])
    is_spine = np.concatenate([np.zeros(pop.pos.size, dtype=bool), np.ones(n_trees, dtype=bool)])
    tree = None
    if record_tree:
        tree = pop.close_tree()
        for r in range(n_trees):
            tree.append({"id": f"spine-{r}", "parent": None, "replicate": r, "birth_time": 0.0,
                         "birth_position": float(x0), "death_time": None, "death_position": None,
                         "end_position": float(path.Y[-1, r]), "spine": True,
                         "fissions": [[float(t), float(x), int(c)] for t, x, c, p in
                                      zip(path.fission_times, path.fission_positions, counts, path.fission_path) if p == r],
                         "note": "off-spine subtrees are not barrier-killed"})
    return SizeBiasedForest(horizon, path, positions, replicate, is_spine, n_trees, not ok, tree)


def radon_nikodym_check(spec: SpectralSolution, law: OffspringLaw, x0: float, horizon: float, cap: float,
                        n_runs: int = 10_000, seed: int = 0) -> dict:
    """``E_Q[min(W_T, c)]`` from size-biased trees against ``E_P[min(W_T, c) W_T / W_0]``."""
    w0 = math.exp(-spec.lam * x0) * float(spec.psi_at(x0))
    weight = lambda pos, t: np.exp(-spec.lam * pos - spec.gamma * t) * spec.psi_at(pos)
    forest = size_biased_tree(spec, law, x0, horizon, seed, n_runs)
    Wq = forest.per_tree(weight(forest.positions, horizon))
    Fq = np.minimum(Wq, cap)
    run = simulate_batch(SimConfig(spec.g, law, x0, horizon, horizon, seed), n_runs, tag="radon_nikodym_plain")
    if run.truncated:
        raise SimulationError("population cap hit in the plain simulation")
    snap = run[-1]
    Wp = np.atleast_1d(snap.per_replicate(weight(snap.positions, horizon)))
    Fp = np.minimum(Wp, cap) * Wp / w0
    a, sa = Fq.mean(), Fq.std(ddof=1) / math.sqrt(Fq.size)
    b, sb = Fp.mean(), Fp.std(ddof=1) / math.sqrt(Fp.size)
    z = abs(a - b) / math.sqrt(sa**2 + sb**2)
    return {"size_biased_mean": float(a), "size_biased_se": float(sa), "weighted_mean": float(b),
            "weighted_se": float(sb), "z": float(z), "passed": bool(z < 3)}


def bessel3_cdf(r, a: float):
    """CDF at time one of a Bessel-3 process started at ``a > 0`` (modulus of 3-D Brownian motion)."""
    r = np.asarray(r, dtype=float)
    phi, Phi = stats.norm.pdf, stats.norm.cdf
    out = (phi(r + a) - phi(r - a)) / a + Phi(r - a) + Phi(r + a) - 1.0
    return np.where(r <= 0, 0.0, np.clip(out, 0.0, 1.0))


def bessel3_sample(a: float, t: float, size: int, rng) -> np.ndarray:
    """``|a e_1 + W_3(t)|`` for 3-D Brownian motion ``W_3``."""
    z = math.sqrt(t) * rng.standard_normal((size, 3))
    z[:, 0] += a
    return np.linalg.norm(z, axis=1)


def bessel3_check(spec: SpectralSolution, x_offset: float, y0: float, horizon: float = 1.0, n_paths: int = 30_000,
                  seed: int = 0, dt: float = 1e-3, min_ess: float = 100.0) -> dict:
    """Bessel-3 law of the barrier distance after the quadratic-variation time change.

    Tilted spine paths from ``y0`` are weighted by the nonnegative martingale
    ``D_t / D_0`` with ``D_t = x + gamma' t + h(Y_t)``, killed at the first
    passage of ``D`` through zero (discrete monitoring plus a Brownian-bridge
    survival factor per step). ``D`` is read off at the time ``T`` where
    ``<M>_T = horizon``. Under the weighted law it should be Bessel-3 at time
    ``horizon`` from ``D_0``; the weighted empirical CDF is compared to the
    exact CDF by a Kolmogorov–Smirnov statistic with the effective sample
    size, and the second moment against ``D_0^2 + 3 horizon``.
    """
    d0 = x_offset + float(spec.h_at(y0))
    if not d0 > 0:
        raise DomainError("start point must satisfy x_offset + h(y0) > 0")
    if horizon != 1.0:
        raise DomainError("the exact reference CDF is implemented for clock time 1")
    hp2_min = float(spec.h_prime.min() ** 2)
    t_max = horizon / hp2_min * 1.02 + 10 * dt
    n_steps = int(math.ceil(t_max / dt))
    rng = stream(seed, "bessel3")
    sq = math.sqrt(dt)
    y = np.full(n_paths, float(y0))
    d = np.full(n_paths, d0)
    hp2 = spec.h_prime_at(y) ** 2
    qv = np.zeros(n_paths)
    surv = np.ones(n_paths)
    done = np.zeros(n_paths, dtype=bool)
    d_at = np.zeros(n_paths)
    gp = spec.gamma_prime
    for k in range(1, n_steps + 1):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        ya = y[act]
        yn = ya + spec.drift_at(ya) * dt + sq * rng.standard_normal(act.size)
        dn = x_offset + gp * k * dt + spec.h_at(yn)
        hpn = spec.h_prime_at(yn) ** 2
        qn = qv[act] + 0.5 * dt * (hp2[act] + hpn)
        do = d[act]
        with np.errstate(over="ignore"):
            bridge = np.where((do > 0) & (dn > 0), -np.expm1(-2.0 * do * dn / (np.sqrt(hp2[act] * hpn) * dt)), 0.0)
        surv[act] *= bridge
        cross = qn >= horizon
        if cross.any():
            c = act[cross]
            w = (horizon - qv[c]) / (qn[cross] - qv[c])
            d_at[c] = do[cross] + w * (dn[cross] - do[cross])
            done[c] = True
        y[act], d[act], hp2[act], qv[act] = yn, dn, hpn, qn
    if not done.all():
        raise SimulationError("clock did not reach the target on every path")
    w = surv * np.maximum(d_at, 0.0) / d0
    ess = float(w.sum() ** 2 / (w**2).sum()) if w.sum() > 0 else 0.0
    if ess < min_ess:
        raise InsufficientSamplesError(f"effective sample size {ess:.1f} below {min_ess}")
    keep = w > 0
    r, wk = d_at[keep], w[keep]
    order = np.argsort(r)
    r, wk = r[order], wk[order]
    ecdf = np.cumsum(wk) / wk.sum()
    F = bessel3_cdf(r, d0)
    D = float(max(np.max(ecdf - F), np.max(F - np.concatenate([[0.0], ecdf[:-1]]))))
    n_eff = int(round(ess))
    p = float(stats.kstwo.sf(D, n_eff))
    mean_w = w.mean()
    sec = float((w * d_at**2).sum() / w.sum())
    sec_se = float(np.sqrt(((w * (d_at**2 - sec)) ** 2).sum()) / w.sum())
    target = d0**2 + 3 * horizon
    return {"d0": d0, "ess": ess, "ks_statistic": D, "p_value": p, "passed": p > 0.01,
            "second_moment": sec, "second_moment_se": sec_se, "second_moment_target": target,
            "second_moment_z": abs(sec - target) / sec_se, "mean_weight": float(mean_w)}
