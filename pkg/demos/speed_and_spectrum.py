"""Principal eigenvalue, minimal speed and the barrier function for a sinusoidal branching rate.

The population spreads at the speed nu* = min gamma(lam)/lam, where gamma(lam)
is the principal eigenvalue of the tilted periodic operator. A constant rate
g = 1/2 with binary branching gives nu* = 1; a periodic rate with the same
mean goes slightly faster.
"""
import numpy as np

from bbmpe import spectral
from bbmpe.environment import PeriodicRate
from bbmpe.offspring import OffspringLaw
from bbmpe.speed import minimal_speed, rate_function

law = OffspringLaw.binary()
for g in (PeriodicRate.constant(0.5), PeriodicRate.sinusoidal(0.5, 0.25)):
    sol = minimal_speed(g, law.mean)
    print(f"{g.label:>24}: nu* = {sol.nu_star:.8f} at lambda* = {sol.lambda_star:.8f}")

g = PeriodicRate.sinusoidal(0.5, 0.25)
for lam in (0.5, 1.0, 2.0):
    print(f"gamma({lam}) = {spectral.principal_eigenvalue(g, law.mean, lam):.10f}, "
          f"gamma(-{lam}) = {spectral.principal_eigenvalue(g, law.mean, -lam):.10f}")

# h(x) = x - psi_lambda/psi is increasing; the truncated martingale needs it
spec = spectral.solve(g, law.mean, 0.6)
print(f"h' ranges over [{spec.h_prime.min():.4f}, {spec.h_prime.max():.4f}]")

# rate function of the tilted spine's empirical speed, zero at -gamma'(lam)
for z in (-spec.gamma_prime - 0.3, -spec.gamma_prime, -spec.gamma_prime + 0.3):
    print(f"I({z:+.4f}) = {rate_function(z, g, law.mean, 0.6):.6f}")
