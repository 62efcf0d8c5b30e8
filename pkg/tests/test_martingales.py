import math

import numpy as np
import pytest

from bbmpe import spectral
from bbmpe.bbm import Barrier, ParticleSnapshot, SimConfig, simulate_batch
from bbmpe.errors import DomainError, InsufficientSamplesError, SimulationError
from bbmpe.martingales import (MartingaleTrace, additive, barrier_sum, derivative, expected_additive,
                               expected_derivative, expected_truncated, mean_identity, regime_diagnostics,
                               regime_of, simulate_trace, trace_run, truncated_V)


@pytest.fixture(scope="module")
def sin_spec(sin_g):
    return spectral.solve(sin_g, 1.0, 0.6)


@pytest.fixture(scope="module")
def const_spec(const_g):
    return spectral.solve(const_g, 1.0, 0.7)


def test_values_at_time_zero(sin_spec):
    y = 0.3
    snap = ParticleSnapshot(0.0, np.array([y]), np.array([0]), n_replicates=1)
    assert additive(snap, sin_spec) == pytest.approx(expected_additive(sin_spec, y), rel=1e-12)
    assert derivative(snap, sin_spec) == pytest.approx(expected_derivative(sin_spec, y), rel=1e-12)
    assert barrier_sum(snap, sin_spec, 0.5) == pytest.approx(expected_truncated(sin_spec, y, 0.5), rel=1e-12)


def test_barrier_sum_decomposes(sin_g, binary, sin_spec):
    run = simulate_batch(SimConfig(sin_g, binary, horizon=2.0, dt=1.0, seed=3), 50)
    for snap in run:
        for a in (0.0, 0.5, 2.0):
            lhs = barrier_sum(snap, sin_spec, a)
            rhs = derivative(snap, sin_spec) + a * additive(snap, sin_spec)
            assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_constant_rate_classical_forms(const_g, binary, const_spec):
    lam = 0.7
    run = simulate_batch(SimConfig(const_g, binary, horizon=1.5, dt=1.5, seed=2), 20)
    snap = run[-1]
    t, x = snap.time, snap.positions
    gamma = lam**2 / 2 + 0.5
    w = snap.per_replicate(np.exp(-gamma * t - lam * x))
    dw = snap.per_replicate(np.exp(-gamma * t - lam * x) * (lam * t + x))
    assert np.allclose(additive(snap, const_spec), w, rtol=1e-8)
    assert np.allclose(derivative(snap, const_spec), dw, rtol=1e-7, atol=1e-10)


def test_truncated_needs_barrier_flags(sin_spec):
    snap = ParticleSnapshot(0.0, np.array([0.0]), np.array([0]), n_replicates=1)
    with pytest.raises(DomainError):
        truncated_V(snap, sin_spec, 0.5)


def test_truncated_martingale_is_nonnegative_and_bounded(sin_g, binary, sin_spec):
    tr = simulate_trace(SimConfig(sin_g, binary, horizon=2.0, dt=0.5, seed=1), sin_spec, 200, "sub", x_offset=0.5)
    assert np.all(tr.V >= -1e-12)
    assert tr.V[0] == pytest.approx(expected_truncated(sin_spec, 0.0, 0.5))


def test_inadmissible_start_rejected(sin_g, binary, sin_spec):
    with pytest.raises(DomainError):
        simulate_trace(SimConfig(sin_g, binary, start_x=-2.0, horizon=1.0), sin_spec, 10, "sub", x_offset=0.5)


def test_trace_checks_barrier_match(sin_g, binary, sin_spec):
    cfg = SimConfig(sin_g, binary, horizon=1.0, barrier=Barrier(0.5, sin_spec))
    run = simulate_batch(cfg, 5)
    with pytest.raises(DomainError):
        trace_run(run, sin_spec, "sub", x_offset=1.0)
    plain = simulate_batch(SimConfig(sin_g, binary, horizon=1.0), 5)
    with pytest.raises(DomainError):
        trace_run(plain, sin_spec, "sub", x_offset=0.5)


def test_mean_identities(sin_g, binary, sin_spec):
    y = 0.2
    tr = simulate_trace(SimConfig(sin_g, binary, start_x=y, horizon=2.0, dt=1.0, seed=7), sin_spec, 4000, "sub",
                        x_offset=1.0)
    rows = mean_identity(tr, {"W": expected_additive(sin_spec, y), "dW": expected_derivative(sin_spec, y),
                              "V": expected_truncated(sin_spec, y, 1.0)})
    assert len(rows) == 6
    assert all(r["z"] < 3.5 for r in rows), rows


def test_regime_labels():
    assert regime_of(0.5, 1.0) == "sub"
    assert regime_of(1.0, 1.0) == "crit"
    assert regime_of(2.0, 1.0) == "super"


def test_negative_additive_rejected():
    with pytest.raises(SimulationError):
        MartingaleTrace(np.array([0.0]), np.array([[-1.0]]), None, None, "sub")


def test_stack_requires_matching_times():
    a = MartingaleTrace(np.array([0.0, 1.0]), np.ones((2, 3)), None, None, "sub")
    b = MartingaleTrace(np.array([0.0, 2.0]), np.ones((2, 3)), None, None, "sub")
    assert MartingaleTrace.stack([a, a]).n_replicates == 6
    with pytest.raises(ValueError):
        MartingaleTrace.stack([a, b])


def test_regime_diagnostics_sample_guards():
    tr = MartingaleTrace(np.array([0.0, 5.0, 20.0]), np.ones((3, 10)), None, None, "sub")
    with pytest.raises(InsufficientSamplesError):
        regime_diagnostics(tr)
    with pytest.raises(InsufficientSamplesError):
        regime_diagnostics(tr, min_replicates=5, late=30.0)
    report = regime_diagnostics(tr, min_replicates=5)
    assert report["passed"] and report["max_z"] == 0.0


def test_regime_diagnostics_synthetic():
    rng = np.random.default_rng(0)
    times = np.array([0.0, 5.0, 20.0])
    W = np.vstack([np.ones(2000), rng.exponential(1e-2, 2000), rng.exponential(1e-5, 2000)])
    assert regime_diagnostics(MartingaleTrace(times, W, None, None, "super"))["passed"]
    crit = MartingaleTrace(times, W, np.vstack([np.zeros(2000), np.ones(2000), -np.ones(2000)]), None, "crit")
    assert not regime_diagnostics(crit)["passed"]
    with pytest.raises(DomainError):
        regime_diagnostics(MartingaleTrace(times, W, None, None, "crit"))


def test_csv_export(tmp_path):
    tr = MartingaleTrace(np.array([0.0, 1.0]), np.ones((2, 2)), np.zeros((2, 2)), None, "sub")
    p = tmp_path / "m.csv"
    tr.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "replicate,t,W,dW,V" and len(lines) == 5
