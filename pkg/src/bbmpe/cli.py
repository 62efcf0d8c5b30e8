"""Command-line entry point: ``python -m bbmpe <subcommand> [--config FILE] [--seed N] [--out DIR] [--threads N]``.

Exit status is 0 when every hard check passes, 1 when one fails and 2 for
usage or configuration errors.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import config as cfgmod
from . import fkpp, spectral
from .bbm import Barrier, SimConfig, simulate, simulate_batch, snapshots_to_csv, write_metadata
from .errors import BBMPEError, ConfigError
from .martingales import trace_run
from .speed import minimal_speed
from .spine import simulate_spine, spine_checks

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class Output:
    """Writes numeric files into one directory and records each in a manifest."""

    def __init__(self, directory, config: cfgmod.ExperimentConfig):
        self.dir = directory
        self.config = config
        self.entries = []
        os.makedirs(directory, exist_ok=True)

    def path(self, name):
        return os.path.join(self.dir, name)

    def register(self, name, kind, **info):
        self.entries.append({"file": name, "kind": kind, "config_sha256": self.config.digest(), **info})

    def json(self, name, obj):
        with open(self.path(name), "w") as fh:
            json.dump(obj, fh, indent=2, default=_default)
        self.register(name, "json")

    def close(self):
        with open(self.path("config.ini"), "w") as fh:
            fh.write(self.config.emit())
        with open(self.path("manifest.json"), "w") as fh:
            json.dump({"config_sha256": self.config.digest(), "seed": self.config.seed, "files": self.entries},
                      fh, indent=2)


def _default(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj)}")


def emit_plot_data(out: Output, name: str, x, y, x_label: str, y_label: str) -> str:
    """Two-column numeric file plus a manifest entry naming the axes. Empty input gives an empty file."""
    x, y = np.asarray(x, dtype=float).ravel(), np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError("x and y must have the same length")
    with open(out.path(name), "w") as fh:
        for a, b in zip(x, y):
            fh.write(f"{a!r} {b!r}\n")
    out.register(name, "curve", x=x_label, y=y_label, rows=int(x.size))
    return name


def _check(name, passed, measured, tolerance):
    return {"name": name, "passed": bool(passed), "measured": measured, "tolerance": tolerance}


def run_spectral(cfg, out, threads):
    g, law = cfg.environment(), cfg.offspring()
    p = cfg["spectral"]
    spec = spectral.solve(g, law.mean, p["lambda"], n_grid=p["n_grid"], derivatives=p["lambda"] > 0)
    with open(out.path("spectral.json"), "w") as fh:
        fh.write(spec.to_json())
    out.register("spectral.json", "json")
    emit_plot_data(out, "psi.dat", spec.grid, spec.psi, "x", "psi")
    checks = [_check("psi positive", spec.psi.min() > 0, float(spec.psi.min()), "> 0"),
              _check("eigen residual", (r := spectral.eigen_residual(spec)) < 1e-8, r, "< 1e-8")]
    if spec.h is not None:
        emit_plot_data(out, "h.dat", spec.grid, spec.h, "x", "h")
        emit_plot_data(out, "h_prime.dat", spec.grid, spec.h_prime, "x", "h_prime")
        checks.append(_check("h' positive", spec.h_prime.min() > 0, float(spec.h_prime.min()), "> 0"))
        checks.append(_check("psi_lambda residual", (r := spectral.psi_lambda_residual(spec)) < 1e-6, r, "< 1e-6"))
    return {"gamma": spec.gamma, "gamma_prime": spec.gamma_prime}, checks


def run_speed(cfg, out, threads):
    g, law = cfg.environment(), cfg.offspring()
    p = cfg["speed"]
    sol = minimal_speed(g, law.mean, tol=p["tol"], n_grid=p["n_grid"])
    emit_plot_data(out, "f_curve.dat", sol.f_curve[:, 0], sol.f_curve[:, 1], "lambda", "gamma/lambda")
    gp = spectral.gamma_prime(g, law.mean, sol.lambda_star, p["n_grid"])
    rel = abs(gp - sol.nu_star) / sol.nu_star
    return sol.to_dict(), [_check("gamma'(lambda*) = nu*", rel < 1e-6, rel, "relative gap < 1e-6")]


def run_simulate(cfg, out, threads):
    g, law = cfg.environment(), cfg.offspring()
    p = cfg["simulate"]
    barrier = None
    spec = None
    if p["barrier_x"] is not None:
        lam = p["barrier_lambda"] if p["barrier_lambda"] is not None else p["lambda"]
        if lam is None:
            raise ConfigError("barrier needs a lambda", key="simulate.barrier_lambda")
        spec = spectral.solve(g, law.mean, lam)
        barrier = Barrier(p["barrier_x"], spec)
    sc = SimConfig(g, law, p["start_x"], p["horizon"], p["dt"], cfg.seed, p["max_particles"], barrier, p["refine"])
    if p["n_replicates"] == 1:
        run = simulate(sc, record_tree=True)
        with open(out.path("tree.ndjson"), "w") as fh:
            for rec in run.tree or []:
                fh.write(json.dumps(rec) + "\n")
        out.register("tree.ndjson", "ndjson")
    else:
        run = simulate_batch(sc, p["n_replicates"], threads=threads)
    snapshots_to_csv(run, out.path("snapshots.csv"))
    out.register("snapshots.csv", "csv", columns=["time", "replicate", "position", "barrier_alive"])
    write_metadata(run, out.path("metadata.json"))
    out.register("metadata.json", "json")
    counts = [float(np.mean(np.atleast_1d(s.counts))) for s in run]
    emit_plot_data(out, "population.dat", [s.time for s in run], counts, "t", "mean population")
    summary = {"truncated": run.truncated, "achieved_time": run.achieved_time, "final_mean_population": counts[-1]}
    lam = p["lambda"]
    if lam is not None:
        spec = spec if spec is not None and spec.lam == lam else spectral.solve(g, law.mean, lam)
        tr = trace_run(run, spec, "sub", p["barrier_x"] if barrier is not None else None)
        tr.to_csv(out.path("martingales.csv"))
        out.register("martingales.csv", "csv", columns=["replicate", "t", "W", "dW", "V"])
        summary["martingales"] = tr.summary()
    return summary, [_check("not truncated", not run.truncated, run.achieved_time, "horizon reached")]


def run_spine(cfg, out, threads):
    g, law = cfg.environment(), cfg.offspring()
    p = cfg["spine"]
    lam = p["lambda"] if p["lambda"] is not None else minimal_speed(g, law.mean).lambda_star
    spec = spectral.solve(g, law.mean, lam)
    cps = p["checkpoints"] or tuple(np.linspace(0, p["horizon"], 11)[1:])
    path = simulate_spine(spec, p["x0"], p["horizon"], p["dt"], cfg.seed, p["n_paths"], checkpoints=cps)
    path.to_csv(out.path("spine.csv"))
    out.register("spine.csv", "csv", columns=["t", "Y", "M", "qv"])
    emit_plot_data(out, "mean_M.dat", path.times, path.M.mean(axis=1), "t", "mean M")
    rep = spine_checks(path, spec) if p["n_paths"] > 1 else {}
    checks = [_check("qv band", rep.get("qv_pass", True), rep.get("qv_rate_min"), "[min h'^2, max h'^2]")]
    return {"lambda": lam, **rep}, checks


def run_pde(cfg, out, threads):
    g, law = cfg.environment(), cfg.offspring()
    p = cfg["pde"]
    sol = minimal_speed(g, law.mean)
    if p["initial"] == "heaviside":
        run = fkpp.front_experiment(g, law, p["T"], p["dt"], p["points_per_unit"], p["record_step"], speed=sol)
        traj = run.trajectory
        emit_plot_data(out, "front.dat", traj.times[: run.fronts.size], run.fronts, "t", "x_front")
        out.json("speed_fit.json", {**run.fit.to_dict(), "nu_star": sol.nu_star, "pulsating_residual": run.residual})
        last = traj.field(traj.times[-1])
        last.to_csv(out.path("field_final.csv"))
        out.register("field_final.csv", "csv", columns=["x", "u"])
        rel = abs(run.fit.corrected_speed - sol.nu_star) / sol.nu_star
        checks = [_check("front speed", rel < 0.02, rel, "within 2% of nu*"),
                  _check("pulsating residual", run.residual < 1e-2, run.residual, "< 1e-2")]
        return {"nu_star": sol.nu_star, **run.fit.to_dict()}, checks
    if p["initial"] == "exponential":
        lam = p["lambda"] if p["lambda"] is not None else sol.lambda_star / 2
        rep = fkpp.supercritical_experiment(g, law, lam, p["T"], p["dt"], p["points_per_unit"])
        out.json("supercritical.json", rep)
        return rep, [_check("pulsating residual", rep["residual"] < 1e-2, rep["residual"], "< 1e-2")]
    raise ConfigError(f"unknown initial data {p['initial']!r}", key="pde.initial")


def run_validate(cfg, out, threads):
    from .validation import run_criterion

    results = []
    for k in cfg["validate"]["criteria"]:
        r = run_criterion(k)
        print(r.line(), flush=True)
        results.append(r.to_dict())
    out.json("criteria.json", results)
    return {"criteria": [r["criterion"] for r in results]}, [
        _check(f"criterion {r['criterion']}: {r['title']}", r["passed"], r["measured"], r["tolerance"]) for r in results]


RUNNERS = {"spectral": run_spectral, "speed": run_speed, "simulate": run_simulate, "spine": run_spine,
           "pde": run_pde, "validate": run_validate}


def run(cfg: cfgmod.ExperimentConfig, threads: int = 1) -> dict:
    """Dispatch to the configured module, write artifacts and return the run report."""
    out = Output(cfg["experiment"]["out"], cfg)
    t0 = time.perf_counter()
    summary, checks = RUNNERS[cfg.module](cfg, out, threads)
    report = {"config": cfg.sections, "config_sha256": cfg.digest(), "module": cfg.module, "summary": summary,
              "checks": checks, "passed": all(c["passed"] for c in checks),
              "wall_clock_seconds": time.perf_counter() - t0}
    out.json("report.json", report)
    out.close()
    return report


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bbmpe", description="Spectral speeds, simulation and fronts for branching Brownian motion with a periodic branching rate.")
    ap.add_argument("command", choices=list(RUNNERS))
    ap.add_argument("--config", help="configuration file")
    ap.add_argument("--seed", type=int, help="override experiment seed")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--threads", type=int, help="worker threads for replicate batches")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PASS if exc.code == 0 else EXIT_USAGE
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig({})
        overrides = {"module": args.command}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out"] = args.out
        if args.threads is not None:
            overrides["threads"] = args.threads
        cfg = cfg.replace("experiment", **overrides)
        if cfg["experiment"]["threads"] < 1:
            raise ConfigError("threads must be >= 1", key="experiment.threads")
    except (ConfigError, OSError) as exc:
        print(f"bbmpe: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        report = run(cfg, cfg["experiment"]["threads"])
    except (ConfigError, ValueError) as exc:
        # parameter values outside what the numerics accept
        print(f"bbmpe: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BBMPEError as exc:
        print(f"bbmpe: {cfg.module} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}")
    print(json.dumps(report["summary"], default=_default)[:2000])
    return EXIT_PASS if report["passed"] else EXIT_FAIL


def main_entry() -> None:
    raise SystemExit(main())
