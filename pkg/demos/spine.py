"""The spine under the tilted measure and its barrier distance.

Along the spine, M_t = gamma' t + h(Y_t) - h(Y_0) is a martingale with
<M>_t between min h'^2 t and max h'^2 t, and Y_t / t tends to -gamma'.
Weighted by the barrier distance it becomes a Bessel-3 process in the clock <M>.
"""
from bbmpe import spectral
from bbmpe.environment import PeriodicRate
from bbmpe.offspring import OffspringLaw
from bbmpe.spine import bessel3_check, fission_intensity_check, simulate_spine, spine_checks

g, law = PeriodicRate.sinusoidal(0.5, 0.25), OffspringLaw.binary()
spec = spectral.solve(g, law.mean, 0.6)
path = simulate_spine(spec, 0.0, 20.0, dt=2e-3, seed=0, n_paths=300, checkpoints=[5, 10, 20], law=law)
rep = spine_checks(path, spec)
print(f"Y_t/t = {rep['slln_mean']:.4f} +- {rep['slln_se']:.4f}, target {rep['slln_target']:.4f}")
print(f"<M>_t/t in [{rep['qv_rate_min']:.4f}, {rep['qv_rate_max']:.4f}], band {rep['qv_band']}")
print(f"fission intensity chi-square p = {fission_intensity_check(path)['p_value']:.3f}")

b = bessel3_check(spec, 1.0, 0.0, 1.0, n_paths=5000, seed=0)
print({k: v for k, v in b.items() if isinstance(v, (int, float, bool))})
