"""Periodic branching environments and periodic interpolation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline


class PeriodicInterpolant:
    """Cubic spline through samples of a 1-periodic function on ``k/n, k=0..n-1``.

    Evaluates at arbitrary real arguments by reducing modulo one. The
    piecewise polynomial is evaluated directly from the spline coefficients,
    which is several times faster than the generic spline call on large
    particle arrays.
    """

    def __init__(self, samples):
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        nodes = np.arange(n + 1) / n
        values = np.append(samples, samples[0])
        self._spline = CubicSpline(nodes, values, bc_type="periodic")
        self._coef = {0: np.ascontiguousarray(self._spline.c.T)}
        self.samples = samples
        self.n = n

    def _coefficients(self, nu):
        if nu not in self._coef:
            self._coef[nu] = np.ascontiguousarray(self._spline.derivative(nu).c.T)
        return self._coef[nu]

    def _eval(self, x, nu):
        x = np.asarray(x, dtype=float)
        u = (x - np.floor(x)) * self.n
        i = u.astype(np.intp)
        i = np.minimum(i, self.n - 1)
        s = (u - i) / self.n
        c = self._coefficients(nu)[i]
        out = c[..., 0]
        for k in range(1, c.shape[-1]):
            out = out * s + c[..., k]
        return out

    def __call__(self, x):
        return self._eval(x, 0)

    def derivative(self, x, nu=1):
        return self._eval(x, nu)


@dataclass(frozen=True, eq=False)
class PeriodicRate:
    """Branching rate ``g`` sampled on a uniform grid of one period.

    Parameters
    ----------
    samples : array_like
        Values of ``g`` at ``k/N``, ``k = 0..N-1``. Must be strictly positive.
    label : str
        Free-form description, echoed into experiment metadata.
    """

    samples: np.ndarray
    label: str = "samples"
    _interp: PeriodicInterpolant = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float).ravel()
        if samples.size < 4:
            raise ValueError("need at least 4 samples of g per period")
        if not np.all(np.isfinite(samples)) or np.any(samples <= 0):
            raise ValueError("g must be finite and strictly positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "_interp", PeriodicInterpolant(samples))

    @property
    def alpha(self) -> float:
        return float(self.samples.min())

    @property
    def beta(self) -> float:
        return float(self.samples.max())

    @property
    def n(self) -> int:
        return self.samples.size

    @property
    def is_constant(self) -> bool:
        return bool(np.ptp(self.samples) == 0.0)

    def __call__(self, x):
        """Evaluate ``g`` anywhere on the real line."""
        if self.is_constant:
            return np.full(np.shape(x), self.samples[0]) if np.ndim(x) else float(self.samples[0])
        return self._interp(x)

    def on_grid(self, n: int) -> np.ndarray:
        """Values of ``g`` on the uniform grid ``k/n``."""
        if n == self.n:
            return self.samples.copy()
        return np.asarray(self(np.arange(n) / n), dtype=float)

    def __eq__(self, other):
        if not isinstance(other, PeriodicRate):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.samples, other.samples)

    def __hash__(self):
        return hash((self.label, self.samples.tobytes()))

    @classmethod
    def constant(cls, value: float, n: int = 64) -> "PeriodicRate":
        return cls(np.full(n, float(value)), label=f"constant({value!r})")

    @classmethod
    def sinusoidal(cls, offset: float, amplitude: float, n: int = 1024, phase: float = 0.0) -> "PeriodicRate":
        """``g(x) = offset + amplitude * sin(2 pi x + phase)`` sampled with ``n`` points."""
        if abs(amplitude) >= offset:
            raise ValueError("offset must exceed |amplitude| to keep g positive")
        x = np.arange(n) / n
        label = f"sinusoidal(offset={offset!r}, amplitude={amplitude!r}, phase={phase!r})"
        return cls(offset + amplitude * np.sin(2 * np.pi * x + phase), label=label)

    def scaled(self, factor: float) -> "PeriodicRate":
        return PeriodicRate(self.samples * factor, label=f"{self.label}*{factor!r}")
