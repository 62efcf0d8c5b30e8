"""Event-exact simulation of branching Brownian motion with a periodic branching rate.

Every particle carries an exponential clock of the dominating rate
``beta = max g``. A ring at position ``y`` is a fission with probability
``g(y)/beta`` and is discarded otherwise, which reproduces the survival kernel
``exp(-int g(X_s) ds)`` exactly. Between rings particles move by exact
Gaussian increments, so nothing is time-discretised.

Many replicates are simulated together as one flat particle array tagged by
replicate index; a batch of replicates shares one counter-based random
stream keyed by ``(seed, tag, batch index)``.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .environment import PeriodicRate
from .errors import SimulationError
from .offspring import OffspringLaw
from .rng import stream, stream_key
from .spectral import SpectralSolution
from . import spectral

DEFAULT_MAX_PARTICLES = 2_000_000
DEFAULT_BATCH = 2000


@dataclass(frozen=True, eq=False)
class Barrier:
    """Moving absorbing barrier ``x_offset + gamma'(lam) s + h(X_s) > 0``.

    Particles are never killed; a particle whose ancestral line has touched
    the barrier is only flagged as no longer barrier-alive.
    """

    x_offset: float
    spec: SpectralSolution

    def __post_init__(self):
        if self.spec.h is None or self.spec.gamma_prime is None:
            raise SimulationError("barrier needs a spectral solution with h and gamma'")

    def distance(self, t, x):
        return self.x_offset + self.spec.gamma_prime * t + self.spec.h_at(x)

    def admissible_start(self, y: float) -> bool:
        """``y > h^{-1}(-x_offset)``, the standing assumption for the truncated martingale."""
        return self.x_offset + float(self.spec.h_at(y)) > 0


@dataclass(frozen=True, eq=False)
class SimConfig:
    g: PeriodicRate
    law: OffspringLaw
    start_x: float = 0.0
    horizon: float = 1.0
    dt: float = 1.0
    seed: int = 0
    max_particles: int = DEFAULT_MAX_PARTICLES
    barrier: Barrier | None = None
    refine: int = 8

    def __post_init__(self):
        if not self.dt > 0:
            raise SimulationError("dt must be positive")
        if not self.horizon >= 0:
            raise SimulationError("horizon must be non-negative")
        if self.max_particles < 1:
            raise SimulationError("max_particles must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise SimulationError("seed must be a 64-bit non-negative integer")
        if self.refine < 1:
            raise SimulationError("refine must be >= 1")

    @property
    def snapshot_times(self) -> np.ndarray:
        k = int(math.floor(self.horizon / self.dt + 1e-9))
        times = self.dt * np.arange(k + 1)
        if self.horizon - times[-1] > 1e-9 * max(1.0, self.horizon):
            times = np.append(times, self.horizon)
        return times

    def echo(self) -> dict:
        return {
            "g": self.g.label,
            "g_samples": len(self.g.samples),
            "law": self.law.to_dict(),
            "start_x": self.start_x,
            "horizon": self.horizon,
            "dt": self.dt,
            "seed": self.seed,
            "max_particles": self.max_particles,
            "barrier": None if self.barrier is None else {"x_offset": self.barrier.x_offset, "lambda": self.barrier.spec.lam},
            "refine": self.refine,
        }


@dataclass(frozen=True, eq=False)
class ParticleSnapshot:
    """Alive particles at one time point.

    For batched runs ``replicate`` tags every particle with its replicate and
    per-replicate reductions return arrays of length ``n_replicates``; for a
    single run they return plain floats.
    """

    time: float
    positions: np.ndarray
    replicate: np.ndarray
    n_replicates: int = 1
    barrier_alive: np.ndarray | None = None

    def __post_init__(self):
        if self.positions.size and np.bincount(self.replicate, minlength=self.n_replicates).min() < 1:
            raise SimulationError("every replicate must have at least one particle")

    def _collapse(self, arr):
        return float(arr[0]) if self.n_replicates == 1 else arr

    def per_replicate(self, values):
        """Sum ``values`` (one per particle) within each replicate."""
        sums = np.bincount(self.replicate, weights=values, minlength=self.n_replicates)
        return self._collapse(sums)

    @property
    def counts(self):
        c = np.bincount(self.replicate, minlength=self.n_replicates)
        return int(c[0]) if self.n_replicates == 1 else c

    @property
    def min_pos(self):
        out = np.full(self.n_replicates, np.inf)
        np.minimum.at(out, self.replicate, self.positions)
        return self._collapse(out)

    @property
    def max_pos(self):
        out = np.full(self.n_replicates, -np.inf)
        np.maximum.at(out, self.replicate, self.positions)
        return self._collapse(out)

    def replicate_view(self, r: int) -> "ParticleSnapshot":
        sel = self.replicate == r
        return ParticleSnapshot(
            time=self.time,
            positions=self.positions[sel],
            replicate=np.zeros(int(sel.sum()), dtype=np.int64),
            barrier_alive=None if self.barrier_alive is None else self.barrier_alive[sel],
        )


@dataclass
class SimulationRun:
    """Snapshots of one (possibly batched) simulation plus bookkeeping.

    Behaves as a sequence of :class:`ParticleSnapshot`.
    """

    snapshots: list
    config: SimConfig
    n_replicates: int = 1
    truncated: bool = False
    achieved_time: float = 0.0
    streams: list = field(default_factory=list)
    tree: list | None = None

    def __iter__(self):
        return iter(self.snapshots)

    def __len__(self):
        return len(self.snapshots)

    def __getitem__(self, i):
        return self.snapshots[i]

    def at(self, t: float) -> ParticleSnapshot:
        for s in self.snapshots:
            if abs(s.time - t) <= 1e-9 * max(1.0, abs(t)):
                return s
        raise KeyError(f"no snapshot at t={t!r}")

    def metadata(self) -> dict:
        return {
            "config": self.config.echo(),
            "n_replicates": self.n_replicates,
            "truncated": self.truncated,
            "achieved_time": self.achieved_time,
            "rng_streams": self.streams,
            "offspring_truncation": self.config.law.truncated_at,
        }


class Population:
    """Flat particle arrays advanced together in event time.

    Parameters
    ----------
    g, law : environment and offspring law
    rng : numpy Generator
    n_replicates : int
    barrier : Barrier, optional
    barrier_step : float
        Longest Brownian move between barrier checks.
    max_particles : int
        Cap on the population of any single replicate.
    record_tree : bool
        Keep a genealogy record (birth/death times and positions, parent).
    """

    def __init__(self, g, law, rng, n_replicates=1, barrier=None, barrier_step=np.inf,
                 max_particles=DEFAULT_MAX_PARTICLES, record_tree=False):
        self.g, self.law, self.rng = g, law, rng
        self.beta = g.beta
        self.n_replicates = n_replicates
        self.barrier = barrier
        self.barrier_step = barrier_step
        self.max_particles = max_particles
        self.record_tree = record_tree
        self.pos = np.empty(0)
        self.time = np.empty(0)
        self.rep = np.empty(0, dtype=np.int64)
        self.alive = np.empty(0, dtype=bool)
        self.truncated = False
        self.fissions = 0
        if record_tree:
            self.ids = np.empty(0, dtype=np.int64)
            self.parent = np.empty(0, dtype=np.int64)
            self.birth_t = np.empty(0)
            self.birth_x = np.empty(0)
            self.records = []
            self._next_id = 0

    def add(self, pos, time, rep, alive=None, parent=None):
        pos = np.asarray(pos, dtype=float)
        n = pos.size
        time = np.broadcast_to(np.asarray(time, dtype=float), (n,))
        rep = np.broadcast_to(np.asarray(rep, dtype=np.int64), (n,))
        if alive is None:
            if self.barrier is not None:
                alive = self.barrier.distance(time, pos) > 0
            else:
                alive = np.ones(n, dtype=bool)
        alive = np.broadcast_to(np.asarray(alive, dtype=bool), (n,))
        self.pos = np.concatenate([self.pos, pos])
        self.time = np.concatenate([self.time, time])
        self.rep = np.concatenate([self.rep, rep])
        self.alive = np.concatenate([self.alive, alive])
        if self.record_tree:
            new_ids = self._next_id + np.arange(n)
            self._next_id += n
            par = np.full(n, -1, dtype=np.int64) if parent is None else np.broadcast_to(parent, (n,))
            self.ids = np.concatenate([self.ids, new_ids])
            self.parent = np.concatenate([self.parent, par])
            self.birth_t = np.concatenate([self.birth_t, time])
            self.birth_x = np.concatenate([self.birth_x, pos])

    def _barrier_update(self, idx, x_old, t_old, x_new, t_new):
        live = self.alive[idx]
        if not live.any():
            return
        b = self.barrier
        j = idx[live]
        d_old = b.distance(t_old[live], x_old[live])
        d_new = b.distance(t_new[live], x_new[live])
        killed = (d_old <= 0) | (d_new <= 0)
        # Brownian-bridge crossing probability between two checks, with the
        # barrier distance diffusing at rate h'(X)^2
        both = ~killed
        span = t_new[live] - t_old[live]
        sig2 = self.barrier.spec.h_prime_at(x_old[live]) * self.barrier.spec.h_prime_at(x_new[live])
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            p_cross = np.where(both & (span > 0), np.exp(-2.0 * d_old * d_new / (sig2 * span)), 0.0)
        u = self.rng.random(j.size)
        killed |= u < p_cross
        self.alive[j[killed]] = False

    def advance(self, target: float) -> bool:
        """Move every particle to ``target``. Returns ``False`` if the population cap was hit."""
        rng = self.rng
        while True:
            act = np.flatnonzero(self.time < target)
            if act.size == 0:
                return True
            t0 = self.time[act]
            x0 = self.pos[act]
            tau = rng.exponential(1.0 / self.beta, act.size)
            cap = np.minimum(target - t0, self.barrier_step)
            fire = tau < cap
            step = np.where(fire, tau, cap)
            t1 = np.where(~fire & (t0 + cap >= target - 1e-15 * max(1.0, abs(target))), target, t0 + step)
            step = t1 - t0
            x1 = x0 + np.sqrt(step) * rng.standard_normal(act.size)
            self.pos[act] = x1
            self.time[act] = t1
            if self.barrier is not None:
                self._barrier_update(act, x0, t0, x1, t1)
            cand = np.flatnonzero(fire)
            if cand.size == 0:
                continue
            if self.g.is_constant:
                acc = cand
            else:
                u = rng.random(cand.size)
                acc = cand[u * self.beta < self.g(x1[cand])]
            if acc.size:
                self._branch(act[acc])
                if np.bincount(self.rep, minlength=self.n_replicates).max() > self.max_particles:
                    self.truncated = True
                    return False

    def _branch(self, idx):
        self.fissions += idx.size
        extra = self.law.sample(self.rng, idx.size)
        if self.record_tree:
            for i in idx:
                self.records.append(self._record(i, death=True))
            # parent slot continues as the first child with a fresh identity
            parents = self.ids[idx].copy()
            n = idx.size
            self.ids[idx] = self._next_id + np.arange(n)
            self._next_id += n
            self.parent[idx] = parents
            self.birth_t[idx] = self.time[idx]
            self.birth_x[idx] = self.pos[idx]
        k = np.repeat(idx, extra)
        if k.size:
            par = self.parent[k] if self.record_tree else None
            self.add(self.pos[k], self.time[k], self.rep[k], alive=self.alive[k], parent=par)

    def _record(self, i, death):
        return {
            "id": int(self.ids[i]),
            "parent": int(self.parent[i]),
            "replicate": int(self.rep[i]),
            "birth_time": float(self.birth_t[i]),
            "birth_position": float(self.birth_x[i]),
            "death_time": float(self.time[i]) if death else None,
            "death_position": float(self.pos[i]) if death else None,
            "end_position": float(self.pos[i]),
        }

    def close_tree(self):
        """Genealogy records, with still-living particles recorded at their current time."""
        if not self.record_tree:
            return None
        return self.records + [self._record(i, death=False) for i in range(self.pos.size)]

    def snapshot(self, t: float) -> ParticleSnapshot:
        return ParticleSnapshot(
            time=float(t),
            positions=self.pos.copy(),
            replicate=self.rep.copy(),
            n_replicates=self.n_replicates,
            barrier_alive=None if self.barrier is None else self.alive.copy(),
        )


def _barrier_step(config: SimConfig) -> float:
    return config.dt / config.refine if config.barrier is not None else np.inf


def _run_batch(config: SimConfig, n: int, batch_index: int, tag: str, record_tree=False):
    rng = stream(config.seed, tag, batch_index)
    pop = Population(config.g, config.law, rng, n_replicates=n, barrier=config.barrier,
                     barrier_step=_barrier_step(config), max_particles=config.max_particles,
                     record_tree=record_tree)
    pop.add(np.full(n, float(config.start_x)), 0.0, np.arange(n))
    snaps = []
    achieved = 0.0
    for t in config.snapshot_times:
        if not pop.advance(float(t)):
            break
        snaps.append(pop.snapshot(t))
        achieved = float(t)
    return snaps, pop.truncated, achieved, pop.close_tree()


def _merge(parts, offsets, n_total):
    merged = []
    for k in range(min(len(p) for p in parts)):
        pieces = [p[k] for p in parts]
        alive = None if pieces[0].barrier_alive is None else np.concatenate([s.barrier_alive for s in pieces])
        merged.append(ParticleSnapshot(
            time=pieces[0].time,
            positions=np.concatenate([s.positions for s in pieces]),
            replicate=np.concatenate([s.replicate + off for s, off in zip(pieces, offsets)]),
            n_replicates=n_total,
            barrier_alive=alive,
        ))
    return merged


def simulate(config: SimConfig, record_tree: bool = False) -> SimulationRun:
    """Single-replicate simulation with snapshots at multiples of ``config.dt``.

    Hitting ``config.max_particles`` stops the run early and marks it
    truncated; nothing is culled.
    """
    snaps, truncated, achieved, tree = _run_batch(config, 1, 0, "simulate", record_tree)
    return SimulationRun(snaps, config, 1, truncated, achieved,
                         [stream_key(config.seed, "simulate", 0).tolist()], tree)


def _batch_sizes(n_replicates, batch_size):
    if n_replicates < 1:
        raise SimulationError("n_replicates must be >= 1")
    return [min(batch_size, n_replicates - s) for s in range(0, n_replicates, batch_size)]


def iter_batches(config: SimConfig, n_replicates: int, batch_size: int = DEFAULT_BATCH,
                 tag: str = "simulate_batch"):
    """Yield one :class:`SimulationRun` per batch of replicates, so large runs can be reduced on the fly."""
    for b, n in enumerate(_batch_sizes(n_replicates, batch_size)):
        snaps, truncated, achieved, _ = _run_batch(config, n, b, tag)
        yield SimulationRun(snaps, config, n, truncated, achieved, [stream_key(config.seed, tag, b).tolist()])


def simulate_batch(config: SimConfig, n_replicates: int, batch_size: int = DEFAULT_BATCH,
                   threads: int = 1, tag: str = "simulate_batch") -> SimulationRun:
    """``n_replicates`` independent copies, simulated in fixed batches.

    Results depend only on ``(config.seed, tag, batch_size)``, not on
    ``threads``.
    """
    sizes = _batch_sizes(n_replicates, batch_size)
    jobs = list(enumerate(sizes))
    run = lambda job: _run_batch(config, job[1], job[0], tag)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    offsets = np.cumsum([0] + sizes[:-1])
    snaps = _merge([p[0] for p in parts], offsets, n_replicates)
    truncated = any(p[1] for p in parts)
    achieved = min(p[2] for p in parts)
    keys = [stream_key(config.seed, tag, i).tolist() for i in range(len(sizes))]
    return SimulationRun(snaps, config, n_replicates, truncated, achieved, keys)


def brownian_weights(g: PeriodicRate, m: float, x: float, t: float, n_paths: int, rng, dt: float = 1e-3,
                     chunk: int = 20_000):
    """Endpoints ``B_t`` and weights ``exp(m int_0^t g(B_s) ds)`` of Brownian paths from ``x``.

    The time integral uses the trapezoid rule on an Euler grid of step ``<= dt``.
    """
    steps = max(1, int(math.ceil(t / dt)))
    h = t / steps
    ends, weights = [], []
    for start in range(0, n_paths, chunk):
        k = min(chunk, n_paths - start)
        b = np.full(k, float(x))
        gb = g(b)
        integral = np.zeros(k)
        for _ in range(steps):
            b = b + math.sqrt(h) * rng.standard_normal(k)
            gn = g(b)
            integral += 0.5 * h * (gb + gn)
            gb = gn
        ends.append(b)
        weights.append(np.exp(m * integral))
    return np.concatenate(ends), np.concatenate(weights)


@dataclass(frozen=True)
class ManyToOneResult:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    z_score: float
    truncated: bool

    def to_dict(self):
        return dict(self.__dict__)


def many_to_one_check(config: SimConfig, lam: float, t: float, n_runs: int = 10_000, n_paths: int = 100_000,
                      spec: SpectralSolution | None = None, path_dt: float = 1e-3) -> ManyToOneResult:
    """Population sum of ``e^{-lam X} psi(X)`` against its single-path weighted expectation.

    ``lhs`` averages ``sum_u e^{-lam X_u(t)} psi(X_u(t), lam)`` over simulated
    populations; ``rhs`` averages ``e^{m int g(B)} e^{-lam B_t} psi(B_t, lam)``
    over independent Brownian paths.
    """
    if t > 4:
        raise SimulationError("many_to_one_check requires t <= 4")
    m = config.law.mean
    if spec is None:
        spec = spectral.solve(config.g, m, lam, derivatives=False)
    cfg = SimConfig(config.g, config.law, config.start_x, t, t, config.seed, config.max_particles)
    run = simulate_batch(cfg, n_runs, tag="many_to_one")
    snap = run[-1]
    per = snap.per_replicate(np.exp(-lam * snap.positions) * spec.psi_at(snap.positions))
    per = np.atleast_1d(per)
    lhs, lhs_se = float(per.mean()), float(per.std(ddof=1) / math.sqrt(per.size))
    rng = stream(config.seed, "many_to_one_paths")
    ends, w = brownian_weights(config.g, m, config.start_x, t, n_paths, rng, dt=path_dt)
    vals = w * np.exp(-lam * ends) * spec.psi_at(ends)
    rhs, rhs_se = float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))
    z = abs(lhs - rhs) / math.sqrt(lhs_se**2 + rhs_se**2)
    return ManyToOneResult(lhs, lhs_se, rhs, rhs_se, z, run.truncated)


def extremes_trend(config: SimConfig, lambda_star: float, nu_star: float, horizons, n_runs: int = 1000,
                   batch_size: int = 100):
    """Monte Carlo means of ``min/t`` and ``max/t`` at each horizon.

    Returns a list of rows ``dict(t, min_over_t, min_se, max_over_t, max_se,
    gap)`` where ``gap = |mean(max/t) - nu*|``; rows stop at the last horizon
    reached before any truncation. ``lambda_star`` is echoed for reference.
    """
    horizons = np.asarray(horizons, dtype=float)
    if horizons.size == 0 or np.any(np.diff(horizons) <= 0) or horizons[0] <= 0:
        raise SimulationError("horizons must be positive and strictly increasing")
    rows = []
    state_done = False
    # one run to the largest horizon, snapshotting exactly at the requested times
    sizes = [min(batch_size, n_runs - s) for s in range(0, n_runs, batch_size)]
    mins = {t: [] for t in horizons}
    maxs = {t: [] for t in horizons}
    reached = horizons[-1]
    for b, n in enumerate(sizes):
        rng = stream(config.seed, "extremes", b)
        pop = Population(config.g, config.law, rng, n, max_particles=config.max_particles)
        pop.add(np.full(n, float(config.start_x)), 0.0, np.arange(n))
        for t in horizons:
            if not pop.advance(float(t)):
                reached = min(reached, max([h for h in horizons if h < t], default=0.0))
                break
            s = pop.snapshot(t)
            mins[t].append(np.atleast_1d(s.min_pos))
            maxs[t].append(np.atleast_1d(s.max_pos))
    for t in horizons:
        if t > reached:
            state_done = True
            break
        lo = np.concatenate(mins[t]) / t
        hi = np.concatenate(maxs[t]) / t
        rows.append({
            "t": float(t),
            "min_over_t": float(lo.mean()),
            "min_se": float(lo.std(ddof=1) / math.sqrt(lo.size)) if lo.size > 1 else float("nan"),
            "max_over_t": float(hi.mean()),
            "max_se": float(hi.std(ddof=1) / math.sqrt(hi.size)) if hi.size > 1 else float("nan"),
            "gap": float(abs(hi.mean() - nu_star)),
            "lambda_star": float(lambda_star),
        })
    return {"rows": rows, "truncated": state_done, "achieved_horizon": float(reached)}


def snapshots_to_csv(run: SimulationRun, path) -> None:
    """Write ``time,replicate,position,barrier_alive`` rows."""
    with open(path, "w") as fh:
        fh.write("time,replicate,position,barrier_alive\n")
        for s in run:
            alive = s.barrier_alive if s.barrier_alive is not None else np.ones(s.positions.size, dtype=bool)
            for r, x, a in zip(s.replicate, s.positions, alive):
                fh.write(f"{s.time!r},{int(r)},{float(x)!r},{int(a)}\n")


def write_metadata(run: SimulationRun, path) -> None:
    with open(path, "w") as fh:
        json.dump(run.metadata(), fh, indent=2)
