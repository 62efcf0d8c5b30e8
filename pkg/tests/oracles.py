"""Independent reference computations used to freeze expected values in the tests.

The principal eigenvalue for a trigonometric rate is computed by Hill's method
(Fourier-Galerkin on ``exp(2 pi i k x)``), which shares no code with the
finite-difference solver under test.
"""
import numpy as np
from scipy.optimize import minimize_scalar


def hill_eigenvalue(lam, m=1.0, offset=0.5, amplitude=0.25, modes=48):
    """Largest real eigenvalue of ``psi''/2 - lam psi' + (lam^2/2 + m g) psi`` for ``g = offset + amplitude sin(2 pi x)``."""
    k = np.arange(-modes, modes + 1)
    w = 2j * np.pi * k
    A = np.diag(0.5 * w**2 - lam * w + lam**2 / 2 + m * offset).astype(complex)
    # sin(2 pi x) = (e^{i2pix} - e^{-i2pix}) / (2i) shifts mode k to k+1 and k-1
    c = m * amplitude / 2j
    A += np.diag(np.full(2 * modes, c), -1) - np.diag(np.full(2 * modes, c), 1)
    ev = np.linalg.eigvals(A)
    return float(ev[np.argmax(ev.real)].real)


def hill_speed(**kw):
    res = minimize_scalar(lambda s: hill_eigenvalue(s, **kw) / s, bounds=(0.2, 4.0), method="bounded",
                          options={"xatol": 1e-12})
    return float(res.fun), float(res.x)


def hill_gamma_prime(lam, d=1e-5, **kw):
    return (hill_eigenvalue(lam + d, **kw) - hill_eigenvalue(lam - d, **kw)) / (2 * d)


def legendre_rate(z, lam, n=200_001, span=6.0, **kw):
    """``sup_s [s z - gamma(lam - s) + gamma(lam)]`` on a grid, refined around the grid maximiser."""
    s = np.linspace(-span, span, 2001)
    vals = np.array([si * z - hill_eigenvalue(lam - si, **kw) for si in s])
    i = int(np.argmax(vals))
    res = minimize_scalar(lambda si: -(si * z - hill_eigenvalue(lam - si, **kw)), bounds=(s[max(i - 1, 0)], s[min(i + 1, s.size - 1)]),
                          method="bounded", options={"xatol": 1e-12})
    return float(-res.fun + hill_eigenvalue(lam, **kw))


if __name__ == "__main__":
    for lam in (0.5, 1.0, 2.0, -1.3):
        print("gamma", lam, repr(hill_eigenvalue(lam)))
    print("speed", hill_speed())
    nu, ls = hill_speed()
    print("gamma' at lambda*", repr(hill_gamma_prime(ls)))
    print("rate z=0.3 lam=1", repr(legendre_rate(0.3, 1.0)))
    print("rate z=-1 lam=0.6", repr(legendre_rate(-1.0, 0.6)))
    print("constant check", hill_eigenvalue(1.5, amplitude=0.0), 1.5**2 / 2 + 0.5)
