"""Additive and derivative martingales in the three regimes.

Below lambda* the additive martingale W stays uniformly integrable and keeps
its mean; above it W collapses to zero; at lambda* W still tends to zero but
the derivative martingale becomes positive.
"""
from bbmpe.environment import PeriodicRate
from bbmpe.martingales import regime_experiment
from bbmpe.offspring import OffspringLaw
from bbmpe.speed import minimal_speed

g, law = PeriodicRate.sinusoidal(0.5, 0.25), OffspringLaw.binary()
lam_star = minimal_speed(g, law.mean).lambda_star
report = regime_experiment(g, law, {"super": 2 * lam_star, "sub": lam_star / 2, "crit": lam_star},
                           n_replicates=1000, horizon=20.0, step=5.0, seed=0)
for regime, r in report.items():
    print(f"{regime:>5}: lambda = {r['lambda']:.4f}, median W at t=5 {r['median_W_early']:.3g}, "
          f"at t=20 {r['median_W_late']:.3g}, passed = {r['passed']}")
print(f"sub means: {[round(m, 3) for m in report['sub']['means']]}")
print(f"crit: fraction with positive derivative martingale {report['crit']['positive_fraction']:.3f}")
