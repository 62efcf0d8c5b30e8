"""Principal eigenpair of the lambda-tilted periodic operator and derived objects.

For a 1-periodic rate ``g`` and mean offspring surplus ``m`` the operator

    L_lam psi = 1/2 psi'' - lam psi' + (lam^2/2 + m g) psi

acting on 1-periodic functions has a simple real eigenvalue ``gamma(lam)`` with
a strictly positive eigenfunction ``psi(., lam)``, normalised to unit mean over
one period. Everything here works with the second-order central-difference
discretization of ``L_lam`` on a uniform grid of ``[0, 1)``; on that grid the
off-diagonal entries are positive (for ``n > |lam|/2``), so the discrete
principal pair is the Perron pair of a Metzler matrix.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .environment import PeriodicInterpolant, PeriodicRate
from .errors import SpectralError
from .rng import stream

MIN_GRID = 32
# psi_lambda-dependent operations are refused this close to lam = 0
LAMBDA_FLOOR = 1e-4


def _check_grid(g: PeriodicRate, m: float, lam: float, n_grid: int):
    if n_grid < MIN_GRID:
        raise ValueError(f"n_grid must be >= {MIN_GRID}, got {n_grid}")
    if not m > 0:
        raise ValueError("mean offspring number m must be positive")
    if abs(lam) >= n_grid:
        raise ValueError("grid too coarse for this lambda (off-diagonals must stay positive)")


def central_difference(n: int) -> sp.csr_matrix:
    """Periodic first-derivative matrix on ``n`` points of ``[0, 1)``."""
    h = 1.0 / n
    e = np.full(n, 0.5 / h)
    D = sp.diags([e[:-1], -e[:-1]], [1, -1], shape=(n, n), format="lil")
    D[0, n - 1] = -0.5 / h
    D[n - 1, 0] = 0.5 / h
    return D.tocsr()


def operator(g: PeriodicRate, m: float, lam: float, n_grid: int) -> sp.csc_matrix:
    """Sparse discretization of ``L_lam`` on the periodic grid ``k/n_grid``."""
    n = n_grid
    h = 1.0 / n
    lower = 0.5 / h**2 + lam / (2 * h)
    upper = 0.5 / h**2 - lam / (2 * h)
    diag = -1.0 / h**2 + 0.5 * lam**2 + m * g.on_grid(n)
    A = sp.diags([diag, np.full(n - 1, upper), np.full(n - 1, lower)], [0, 1, -1], format="lil")
    A[0, n - 1] = lower
    A[n - 1, 0] = upper
    return A.tocsc()


def _power(solve, n, tol, maxiter):
    v = np.ones(n)
    prev = np.inf
    for _ in range(maxiter):
        w = solve(v)
        w /= w.mean()
        diff = np.max(np.abs(w - v))
        # stop at tol, or once the update stagnates at rounding level
        if diff < tol or (diff < 1e-12 and diff >= prev):
            return w
        v, prev = w, diff
    raise SpectralError("inverse iteration for the principal eigenpair did not converge")


def _two_sided_rayleigh(g, m, lam, n, right, left) -> float:
    # Entries of L_lam are O(n^2) while gamma is O(1), so a float64 eigenvalue
    # carries ~n^2*eps absolute error. The two-sided quotient has error
    # quadratic in the eigenvector errors and is evaluated in extended precision.
    ld = np.longdouble
    h = ld(1) / ld(n)
    lam_ = ld(lam)
    lower = ld(0.5) / h**2 + lam_ / (2 * h)
    upper = ld(0.5) / h**2 - lam_ / (2 * h)
    diag = -ld(1) / h**2 + ld(0.5) * lam_**2 + ld(m) * g.on_grid(n).astype(ld)
    v = right.astype(ld)
    Av = lower * np.roll(v, 1) + upper * np.roll(v, -1) + diag * v
    phi = left.astype(ld)
    return float(np.dot(phi, Av) / np.dot(phi, v))


def _perron_inverse(g, m, lam, A: sp.csc_matrix, shift: float, tol=1e-15, maxiter=2000):
    # shift exceeds the Perron root, so (shift - A)^-1 is a positive matrix and
    # its dominant eigenvector is the Perron vector of A
    n = A.shape[0]
    lu = spla.splu((shift * sp.identity(n, format="csc") - A).tocsc())
    right = _power(lu.solve, n, tol, maxiter)
    left = _power(lambda v: lu.solve(v, trans="T"), n, tol, maxiter)
    return _two_sided_rayleigh(g, m, lam, n, right, left), right


def _perron_dense(A: sp.csc_matrix):
    vals, vecs = sla.eig(A.toarray())
    k = int(np.argmax(vals.real))
    if abs(vals[k].imag) > 1e-8 * max(1.0, abs(vals[k].real)):
        raise SpectralError("principal eigenvalue is not real")
    v = vecs[:, k]
    v = v * np.exp(-1j * np.angle(v[np.argmax(np.abs(v))]))
    return float(vals[k].real), v.real


def principal_eigenpair(g: PeriodicRate, m: float, lam: float, n_grid: int = 512, method: str = "inverse"):
    """Principal eigenvalue ``gamma`` and positive eigenvector ``psi`` with unit period-mean.

    Parameters
    ----------
    g : PeriodicRate
    m : float
        Mean of the offspring surplus ``L``.
    lam : float
    n_grid : int
        Number of grid points on ``[0, 1)``.
    method : {"inverse", "dense"}
        Shifted inverse iteration on the sparse operator (default) or a full
        dense eigendecomposition.

    Returns
    -------
    gamma : float
    psi : ndarray of shape (n_grid,)
    """
    _check_grid(g, m, lam, n_grid)
    A = operator(g, m, lam, n_grid)
    if method == "inverse":
        shift = 0.5 * lam**2 + m * g.beta + 1.0
        gamma, psi = _perron_inverse(g, m, lam, A, shift)
    elif method == "dense":
        gamma, psi = _perron_dense(A)
    else:
        raise ValueError(f"unknown method {method!r}")
    psi = psi / psi.mean()
    if not np.all(psi > 0):
        raise SpectralError("no strictly positive principal eigenvector (discretization failure)")
    return gamma, psi


def principal_eigenvalue(g, m, lam, n_grid=512) -> float:
    return principal_eigenpair(g, m, lam, n_grid)[0]


def _fd_step(lam: float) -> float:
    return max(1e-5, 1e-7 * abs(lam))


def gamma_prime(g: PeriodicRate, m: float, lam: float, n_grid: int = 512) -> float:
    """Derivative of ``gamma`` by central differences in ``lam``.

    The stencil never straddles ``lam = 0``; within one step of the origin a
    second-order one-sided stencil on the side of ``lam`` is used.
    """
    d = _fd_step(lam)
    if lam + d <= lam or lam - d >= lam:
        raise SpectralError("finite-difference step underflow")
    gam = lambda s: principal_eigenvalue(g, m, s, n_grid)
    if abs(lam) >= d:
        return (gam(lam + d) - gam(lam - d)) / (2 * d)
    s = 1.0 if lam >= 0 else -1.0
    h = s * d
    return (-3 * gam(lam) + 4 * gam(lam + h) - gam(lam + 2 * h)) / (2 * h)


def gamma_prime_adjoint(g: PeriodicRate, m: float, lam: float, n_grid: int = 512) -> float:
    """Derivative of the discrete ``gamma`` from left/right eigenvectors.

    Uses ``gamma' = <phi, A' psi> / <phi, psi>`` with ``phi`` the left Perron
    vector, which is the right Perron vector at ``-lam`` (the operator at
    ``-lam`` is the transpose of the operator at ``lam``).
    """
    _, psi = principal_eigenpair(g, m, lam, n_grid)
    _, left = principal_eigenpair(g, m, -lam, n_grid)
    dA_psi = -(central_difference(n_grid) @ psi) + lam * psi
    return float(left @ dA_psi / (left @ psi))


@dataclass(frozen=True, eq=False)
class SpectralSolution:
    """Principal eigenpair at one ``lam`` together with its ``lam``-derivative objects.

    All grids live on ``k/n_grid``, ``k = 0..n_grid-1``. ``h`` holds
    ``x - psi_lambda/psi`` on the base period; on the real line it satisfies
    ``h(x + 1) = h(x) + 1``.
    """

    g: PeriodicRate
    m: float
    lam: float
    gamma: float
    psi: np.ndarray
    psi_x: np.ndarray
    gamma_prime: float | None = None
    psi_lambda: np.ndarray | None = None
    h: np.ndarray | None = None
    h_prime: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    @property
    def n_grid(self) -> int:
        return self.psi.size

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.n_grid) / self.n_grid

    def _interp(self, name):
        if name not in self._cache:
            values = getattr(self, name)
            if values is None:
                raise SpectralError(f"{name} not available on this solution")
            self._cache[name] = PeriodicInterpolant(values)
        return self._cache[name]

    def psi_at(self, x):
        return self._interp("psi")(x)

    def psi_lambda_at(self, x):
        return self._interp("psi_lambda")(x)

    def h_prime_at(self, x):
        return self._interp("h_prime")(x)

    def h_at(self, x):
        """Barrier function on the whole real line."""
        if "h_periodic" not in self._cache:
            if self.psi_lambda is None:
                raise SpectralError("psi_lambda not available on this solution")
            self._cache["h_periodic"] = PeriodicInterpolant(-self.psi_lambda / self.psi)
        return np.asarray(x, dtype=float) + self._cache["h_periodic"](x)

    def drift_at(self, x):
        """Spine drift ``psi_x/psi - lam`` (generator of the tilted motion)."""
        if "log_psi_x" not in self._cache:
            self._cache["log_psi_x"] = PeriodicInterpolant(self.psi_x / self.psi)
        return self._cache["log_psi_x"](x) - self.lam

    def h_inverse(self, y):
        """Inverse of the strictly increasing extended ``h``, by bracketed root finding."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.empty_like(y)
        for i, target in enumerate(y):
            # h(x) - x is periodic and bounded, so the root lies within one period of target
            lo = target - 1.0 - np.max(np.abs(self.h - self.grid))
            hi = target + 1.0 + np.max(np.abs(self.h - self.grid))
            out[i] = brentq(lambda x: float(self.h_at(x)) - target, lo, hi, xtol=1e-13, rtol=1e-15)
        return out if out.size > 1 else float(out[0])

    def to_json(self) -> str:
        doc = {
            "lambda": self.lam,
            "gamma": self.gamma,
            "gamma_prime": self.gamma_prime,
            "m": self.m,
            "n_grid": self.n_grid,
            "g": self.g.on_grid(self.n_grid).tolist(),
            "psi": self.psi.tolist(),
            "psi_x": self.psi_x.tolist(),
            "psi_lambda": None if self.psi_lambda is None else self.psi_lambda.tolist(),
            "h": None if self.h is None else self.h.tolist(),
            "h_prime": None if self.h_prime is None else self.h_prime.tolist(),
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str, label: str = "samples") -> "SpectralSolution":
        doc = json.loads(text)
        arr = lambda k: None if doc.get(k) is None else np.asarray(doc[k], dtype=float)
        return cls(
            g=PeriodicRate(np.asarray(doc["g"]), label=label),
            m=doc["m"],
            lam=doc["lambda"],
            gamma=doc["gamma"],
            psi=arr("psi"),
            psi_x=arr("psi_x"),
            gamma_prime=doc.get("gamma_prime"),
            psi_lambda=arr("psi_lambda"),
            h=arr("h"),
            h_prime=arr("h_prime"),
        )


def psi_lambda(spec: SpectralSolution) -> np.ndarray:
    """``lam``-derivative of the normalised eigenvector.

    Solves ``(L_lam - gamma) u = gamma' psi + psi_x - lam psi`` subject to
    ``mean(u) = 0``. The operator on the left is singular with kernel
    ``psi``; the system is bordered with ``psi`` as an extra column, whose
    multiplier absorbs the (tiny) inconsistency left by the finite-difference
    ``gamma'`` and is returned in the solution cache as ``"solvability"``.
    """
    if spec.gamma_prime is None:
        raise SpectralError("gamma_prime must be computed before psi_lambda")
    if abs(spec.lam) < LAMBDA_FLOOR:
        raise SpectralError(f"psi_lambda is not supported for |lambda| < {LAMBDA_FLOOR}")
    n = spec.n_grid
    A = operator(spec.g, spec.m, spec.lam, n)
    rhs = spec.gamma_prime * spec.psi + spec.psi_x - spec.lam * spec.psi
    K = sp.bmat(
        [
            [A - spec.gamma * sp.identity(n), sp.csc_matrix(spec.psi[:, None])],
            [sp.csc_matrix(np.full((1, n), 1.0 / n)), None],
        ],
        format="csc",
    )
    sol = spla.spsolve(K, np.append(rhs, 0.0))
    if not np.all(np.isfinite(sol)):
        raise SpectralError("bordered system for psi_lambda is rank deficient")
    u, mu = sol[:n], sol[n]
    resid = np.max(np.abs((A - spec.gamma * sp.identity(n)) @ u + mu * spec.psi - rhs))
    if resid > 1e-6 * max(1.0, np.max(np.abs(rhs))):
        raise SpectralError("rank deficiency beyond the one-dimensional kernel")
    spec._cache["solvability"] = float(mu)
    return u


def barrier_function(spec: SpectralSolution):
    """Barrier ``h = x - psi_lambda/psi`` on the base grid and its derivative.

    ``h'`` is formed as ``1 - (psi_lambda_x psi - psi_lambda psi_x) / psi^2``
    with ``psi_lambda_x`` the central difference of the ``psi_lambda`` grid.
    """
    if spec.psi_lambda is None:
        raise SpectralError("psi_lambda must be computed before the barrier function")
    D = central_difference(spec.n_grid)
    pl, ps = spec.psi_lambda, spec.psi
    h = spec.grid - pl / ps
    h_prime = 1.0 - ((D @ pl) * ps - pl * spec.psi_x) / ps**2
    if not np.all(h_prime > 0):
        raise SpectralError(f"h' is not strictly positive (min {h_prime.min():.3g}): bad spectral solve")
    return h, h_prime


def solve(g: PeriodicRate, m: float, lam: float, n_grid: int = 512, derivatives: bool = True) -> SpectralSolution:
    """Full spectral solution at ``lam``.

    With ``derivatives=True`` (requires ``lam > 0`` beyond ``LAMBDA_FLOOR``)
    also computes ``gamma'``, ``psi_lambda``, ``h`` and ``h'``.
    """
    gamma, psi = principal_eigenpair(g, m, lam, n_grid)
    psi_x = central_difference(n_grid) @ psi
    spec = SpectralSolution(g=g, m=m, lam=lam, gamma=gamma, psi=psi, psi_x=psi_x)
    if not derivatives:
        return spec
    spec = replace(spec, gamma_prime=gamma_prime(g, m, lam, n_grid))
    pl = psi_lambda(spec)
    mu = spec._cache["solvability"]
    spec = replace(spec, psi_lambda=pl)
    if lam > 0:
        h, hp = barrier_function(spec)
        spec = replace(spec, h=h, h_prime=hp)
    spec._cache["solvability"] = mu
    return spec


def eigen_residual(spec: SpectralSolution) -> float:
    """Max-norm residual of ``L_lam psi - gamma psi`` on the grid."""
    A = operator(spec.g, spec.m, spec.lam, spec.n_grid)
    return float(np.max(np.abs(A @ spec.psi - spec.gamma * spec.psi)))


def psi_lambda_residual(spec: SpectralSolution) -> float:
    """Max-norm residual of the differentiated eigen-equation satisfied by ``psi_lambda``."""
    A = operator(spec.g, spec.m, spec.lam, spec.n_grid)
    D = central_difference(spec.n_grid)
    pl, ps = spec.psi_lambda, spec.psi
    lhs = A @ pl - D @ ps + spec.lam * ps
    rhs = spec.gamma * pl + spec.gamma_prime * ps
    return float(np.max(np.abs(lhs - rhs)))


def gauge_constant(spec: SpectralSolution) -> float:
    """``max_{x, 0<=d<=1} e^{-lam d} psi(x)/psi(x-d)``.

    This equals the supremum of ``Pi_x[exp(int_0^{tau_y} (m g - gamma))]``
    over ``y in [x-1, x]`` and enters the lower bound on ``h'``.
    """
    n = spec.n_grid
    ps = spec.psi
    best = 0.0
    for k in range(n + 1):
        ratio = np.exp(-spec.lam * k / n) * ps / np.roll(ps, k)
        best = max(best, float(ratio.max()))
    return best


def h_prime_lower_bound(spec: SpectralSolution) -> float:
    c = gauge_constant(spec)
    return spec.gamma_prime / (c * np.sqrt(2 * (spec.gamma - spec.m * spec.g.alpha)))


def feynman_kac_residual(spec: SpectralSolution, t: float, x: float, n_paths: int = 100_000, seed: int = 0, dt: float = 1e-3):
    """Monte Carlo check of the Feynman-Kac representation of ``psi``.

    Estimates ``Pi_x[psi(B_t) exp(-gamma t - lam (B_t - x) + m int_0^t g(B_s) ds)]``
    with Euler-discretised Brownian paths and a trapezoid time integral.

    Returns
    -------
    estimate, std_err : float
    """
    if t > 5:
        raise ValueError("t must be <= 5")
    if t < 0 or n_paths < 2:
        raise ValueError("need t >= 0 and n_paths >= 2")
    if t == 0:
        return float(spec.psi_at(x)), 0.0
    rng = stream(seed, "feynman_kac")
    steps = max(1, int(np.ceil(t / dt)))
    h = t / steps
    chunk = 20_000
    vals = []
    for start in range(0, n_paths, chunk):
        k = min(chunk, n_paths - start)
        b = np.full(k, float(x))
        gb = spec.g(b)
        integral = np.zeros(k)
        for _ in range(steps):
            b = b + np.sqrt(h) * rng.standard_normal(k)
            gn = spec.g(b)
            integral += 0.5 * h * (gb + gn)
            gb = gn
        vals.append(spec.psi_at(b) * np.exp(-spec.gamma * t - spec.lam * (b - x) + spec.m * integral))
    vals = np.concatenate(vals)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(vals.size))
