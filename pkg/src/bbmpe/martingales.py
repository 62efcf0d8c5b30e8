"""Additive, derivative and barrier-truncated martingales evaluated on simulated populations."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .bbm import DEFAULT_BATCH, Barrier, ParticleSnapshot, SimConfig, SimulationRun, iter_batches
from .errors import DomainError, InsufficientSamplesError, SimulationError
from .spectral import SpectralSolution

REGIMES = ("sub", "crit", "super")


def _weights(snap: ParticleSnapshot, spec: SpectralSolution) -> np.ndarray:
    x = snap.positions
    return np.exp(-spec.lam * x - spec.gamma * snap.time) * spec.psi_at(x)


def additive(snap: ParticleSnapshot, spec: SpectralSolution):
    """``W_t = e^{-gamma t} sum_u e^{-lam X_u} psi(X_u)``, one value per replicate."""
    return snap.per_replicate(_weights(snap, spec))


def derivative(snap: ParticleSnapshot, spec: SpectralSolution):
    """``dW_t = e^{-gamma t} sum_u e^{-lam X_u} (psi (gamma' t + X_u) - psi_lam)``; may be negative."""
    if spec.psi_lambda is None:
        raise DomainError("derivative martingale needs psi_lambda in the spectral solution")
    x, t = snap.positions, snap.time
    vals = np.exp(-spec.lam * x - spec.gamma * t) * (spec.psi_at(x) * (spec.gamma_prime * t + x) - spec.psi_lambda_at(x))
    return snap.per_replicate(vals)


def barrier_sum(snap: ParticleSnapshot, spec: SpectralSolution, x_offset: float, mask=None):
    """``e^{-gamma t} sum_u e^{-lam X_u} psi(X_u) (x + gamma' t + h(X_u))`` over ``mask`` (all particles by default)."""
    x, t = snap.positions, snap.time
    vals = _weights(snap, spec) * (x_offset + spec.gamma_prime * t + spec.h_at(x))
    if mask is not None:
        vals = np.where(mask, vals, 0.0)
    return snap.per_replicate(vals)


def truncated_V(snap: ParticleSnapshot, spec: SpectralSolution, x_offset: float):
    """``V_t^x``: :func:`barrier_sum` restricted to particles whose line never met the barrier."""
    if snap.barrier_alive is None:
        raise DomainError("snapshot carries no barrier flags; simulate with a barrier")
    return barrier_sum(snap, spec, x_offset, mask=snap.barrier_alive)


def expected_additive(spec: SpectralSolution, y: float) -> float:
    return float(math.exp(-spec.lam * y) * spec.psi_at(y))


def expected_derivative(spec: SpectralSolution, y: float) -> float:
    return float(math.exp(-spec.lam * y) * (y * spec.psi_at(y) - spec.psi_lambda_at(y)))


def expected_truncated(spec: SpectralSolution, y: float, x_offset: float) -> float:
    return float(math.exp(-spec.lam * y) * spec.psi_at(y) * (x_offset + spec.h_at(y)))


@dataclass(frozen=True, eq=False)
class MartingaleTrace:
    """Martingale values along a batch of replicates.

    ``W``, ``dW`` and ``V`` have shape ``(len(times), n_replicates)``.
    """

    times: np.ndarray
    W: np.ndarray
    dW: np.ndarray | None
    V: np.ndarray | None
    regime: str
    lam: float = float("nan")
    start_x: float = 0.0
    truncated: bool = False

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if np.any(self.W < 0):
            raise SimulationError("negative additive martingale value")
        if self.V is not None and np.any(self.V < -1e-12):
            raise SimulationError("negative truncated martingale value")

    @property
    def n_replicates(self) -> int:
        return self.W.shape[1]

    def summary(self) -> list:
        rows = []
        for k, t in enumerate(self.times):
            row = {"t": float(t)}
            for name in ("W", "dW", "V"):
                a = getattr(self, name)
                if a is None:
                    continue
                row[f"{name}_mean"] = float(a[k].mean())
                row[f"{name}_se"] = float(a[k].std(ddof=1) / math.sqrt(a.shape[1])) if a.shape[1] > 1 else float("nan")
                row[f"{name}_median"] = float(np.median(a[k]))
            rows.append(row)
        return rows

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("replicate,t,W,dW,V\n")
            for k, t in enumerate(self.times):
                for r in range(self.n_replicates):
                    dw = "" if self.dW is None else repr(float(self.dW[k, r]))
                    v = "" if self.V is None else repr(float(self.V[k, r]))
                    fh.write(f"{r},{float(t)!r},{float(self.W[k, r])!r},{dw},{v}\n")

    @staticmethod
    def stack(traces) -> "MartingaleTrace":
        """Concatenate traces with equal time grids along the replicate axis."""
        traces = list(traces)
        if not traces:
            raise InsufficientSamplesError("no traces")
        t0 = traces[0]
        for tr in traces[1:]:
            if not np.array_equal(tr.times, t0.times) or tr.regime != t0.regime:
                raise ValueError("traces must share times and regime")
        cat = lambda name: None if getattr(t0, name) is None else np.hstack([np.atleast_2d(getattr(tr, name).T).T for tr in traces])
        return MartingaleTrace(t0.times, cat("W"), cat("dW"), cat("V"), t0.regime, t0.lam, t0.start_x,
                               any(tr.truncated for tr in traces))


def regime_of(lam: float, lambda_star: float, tol: float = 1e-6) -> str:
    if abs(lam - lambda_star) <= tol * max(1.0, lambda_star):
        return "crit"
    return "sub" if lam < lambda_star else "super"


def trace_run(run: SimulationRun, spec: SpectralSolution, regime: str, x_offset: float | None = None) -> MartingaleTrace:
    """Evaluate ``W``, ``dW`` (when ``psi_lambda`` is known) and ``V`` (when the run tracked a barrier)."""
    V = None
    if x_offset is not None:
        b = run.config.barrier
        if b is None:
            raise DomainError("run has no barrier but x_offset was given")
        if b.x_offset != x_offset or b.spec.lam != spec.lam:
            raise DomainError("barrier parameters of the run do not match (x_offset, lambda)")
        V = np.array([np.atleast_1d(truncated_V(s, spec, x_offset)) for s in run])
    W = np.array([np.atleast_1d(additive(s, spec)) for s in run])
    dW = None if spec.psi_lambda is None else np.array([np.atleast_1d(derivative(s, spec)) for s in run])
    times = np.array([s.time for s in run])
    return MartingaleTrace(times, W, dW, V, regime, spec.lam, run.config.start_x, run.truncated)


def simulate_trace(config: SimConfig, spec: SpectralSolution, n_replicates: int, regime: str,
                   x_offset: float | None = None, batch_size: int = DEFAULT_BATCH,
                   tag: str = "martingales") -> MartingaleTrace:
    """Simulate ``n_replicates`` populations and trace their martingales at the snapshot times.

    Batches are reduced to martingale values as they finish, so only one
    batch of particles is held in memory.
    """
    if x_offset is not None:
        barrier = Barrier(x_offset, spec)
        if not barrier.admissible_start(config.start_x):
            raise DomainError("start point must satisfy x_offset + h(y) > 0")
        config = SimConfig(config.g, config.law, config.start_x, config.horizon, config.dt, config.seed,
                           config.max_particles, barrier, config.refine)
    parts = []
    for run in iter_batches(config, n_replicates, batch_size, tag):
        if run.truncated:
            raise SimulationError(f"population cap hit at t={run.achieved_time}; reduce the horizon or replicates")
        parts.append(trace_run(run, spec, regime, x_offset))
    return MartingaleTrace.stack(parts)


def mean_identity(trace: MartingaleTrace, expected: dict, n_se: float = 3.0) -> list:
    """Compare per-time sample means with their exact expectations.

    ``expected`` maps ``"W"``, ``"dW"`` or ``"V"`` to the constant mean.
    Returns one row per (quantity, time) with the z-score and a pass flag.
    """
    rows = []
    for name, target in expected.items():
        a = getattr(trace, name)
        if a is None:
            continue
        for k, t in enumerate(trace.times):
            if t == 0:
                continue
            mean = float(a[k].mean())
            se = float(a[k].std(ddof=1) / math.sqrt(a.shape[1]))
            z = abs(mean - target) / se if se > 0 else (0.0 if mean == target else math.inf)
            rows.append({"quantity": name, "t": float(t), "mean": mean, "se": se, "expected": target,
                         "z": z, "pass": z <= n_se})
    return rows


def _row_at(trace, t):
    k = int(np.argmin(np.abs(trace.times - t)))
    if abs(trace.times[k] - t) > 1e-9:
        raise KeyError(f"trace has no time {t}")
    return k


def regime_diagnostics(traces, regime: str | None = None, early: float = 5.0, late: float = 20.0,
                       min_replicates: int = 1000, shrink_factor: float = 10.0, positive_fraction: float = 0.95,
                       n_se: float = 3.0) -> dict:
    """Finite-horizon signatures of the three martingale-limit regimes.

    Parameters
    ----------
    traces : MartingaleTrace or sequence of them
    regime : {"sub", "crit", "super"}, optional
        Defaults to the label carried by the traces.

    Returns
    -------
    dict
        Statistics and a ``pass`` flag:

        * ``super``: median of ``W`` shrinks by at least ``shrink_factor``
          between ``early`` and ``late``.
        * ``sub``: the sample mean of ``W`` stays within ``n_se`` standard
          errors of ``W_0`` at every recorded time.
        * ``crit``: the fraction of replicates with ``dW > 0`` at ``late`` is
          at least ``positive_fraction``; the median and mean of ``W`` are
          reported as the uniform-integrability signature.
    """
    trace = traces if isinstance(traces, MartingaleTrace) else MartingaleTrace.stack(traces)
    regime = regime or trace.regime
    if trace.n_replicates < min_replicates:
        raise InsufficientSamplesError(f"insufficient replicates: {trace.n_replicates} < {min_replicates}")
    if trace.times[-1] < late:
        raise InsufficientSamplesError(f"horizon {trace.times[-1]} below {late}")
    W0 = float(trace.W[0].mean())
    report = {"regime": regime, "n_replicates": trace.n_replicates, "lambda": trace.lam, "truncated": trace.truncated}
    ke, kl = _row_at(trace, early), _row_at(trace, late)
    med_e, med_l = float(np.median(trace.W[ke])), float(np.median(trace.W[kl]))
    report.update(median_W_early=med_e, median_W_late=med_l)
    if regime == "super":
        factor = med_e / med_l if med_l > 0 else math.inf
        report.update(shrink_factor=factor, threshold=shrink_factor, passed=factor >= shrink_factor)
    elif regime == "sub":
        zs = []
        for k in range(1, len(trace.times)):
            se = trace.W[k].std(ddof=1) / math.sqrt(trace.n_replicates)
            zs.append(abs(trace.W[k].mean() - W0) / se if se > 0 else 0.0)
        report.update(W0=W0, max_z=float(max(zs)), threshold=n_se, passed=bool(max(zs) <= n_se),
                      means=[float(m) for m in trace.W.mean(axis=1)])
    elif regime == "crit":
        if trace.dW is None:
            raise DomainError("critical diagnostics need the derivative martingale")
        frac = float(np.mean(trace.dW[kl] > 0))
        report.update(positive_fraction=frac, threshold=positive_fraction, passed=frac >= positive_fraction,
                      median_W_decreasing=bool(med_l < med_e),
                      mean_W_late=float(trace.W[kl].mean()), W0=W0)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return report


def shift_relation_check(config: SimConfig, spec: SpectralSolution, n_replicates: int = 2000) -> dict:
    """Two-sample KS test of ``W_T`` started at ``x + 1`` against ``e^{-lam} W_T`` started at ``x``."""
    base = simulate_trace(config, spec, n_replicates, "sub", tag="shift_base").W[-1]
    cfg1 = SimConfig(config.g, config.law, config.start_x + 1.0, config.horizon, config.dt, config.seed,
                     config.max_particles)
    shifted = simulate_trace(cfg1, spec, n_replicates, "sub", tag="shift_moved").W[-1]
    res = stats.ks_2samp(shifted, math.exp(-spec.lam) * base)
    return {"statistic": float(res.statistic), "p_value": float(res.pvalue), "passed": res.pvalue > 0.01}


def simulate_traces(config: SimConfig, targets, n_replicates: int, batch_size: int = DEFAULT_BATCH,
                    tag: str = "martingales") -> list:
    """Like :func:`simulate_trace` for several ``(spec, regime)`` pairs evaluated on the same populations."""
    parts = [[] for _ in targets]
    for run in iter_batches(config, n_replicates, batch_size, tag):
        if run.truncated:
            raise SimulationError(f"population cap hit at t={run.achieved_time}; reduce the horizon or replicates")
        for acc, (spec, regime) in zip(parts, targets):
            acc.append(trace_run(run, spec, regime))
    return [MartingaleTrace.stack(p) for p in parts]


def regime_experiment(g, law, lambdas: dict, n_replicates: int = 1000, horizon: float = 20.0, step: float = 5.0,
                      seed: int = 0, batch_size: int = 50) -> dict:
    """Regime diagnostics for several ``{regime: lambda}`` pairs on one set of simulated populations.

    Populations start at the origin and are recorded every ``step`` up to
    ``horizon``; the report per regime comes from :func:`regime_diagnostics`.
    """
    from .spectral import solve

    targets = [(solve(g, law.mean, lam), regime) for regime, lam in lambdas.items()]
    cfg = SimConfig(g, law, 0.0, horizon, step, seed)
    traces = simulate_traces(cfg, targets, n_replicates, batch_size=batch_size, tag="regimes")
    return {regime: regime_diagnostics(tr, regime, early=step, late=horizon)
            for (_, regime), tr in zip(targets, traces)}
