"""Offspring laws: a particle dies and is replaced by ``1 + L`` children."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# support cap applied to heavy-tailed presets
MAX_SUPPORT = 64


@dataclass(frozen=True, eq=False)
class OffspringLaw:
    """Distribution ``{p_k}`` of the surplus ``L`` (number of children minus one).

    ``llogl_finite`` and ``llog2l_finite`` describe the moment class of the
    law *before* any support truncation; they only label experiments.
    """

    probs: np.ndarray
    label: str = "custom"
    llogl_finite: bool = True
    llog2l_finite: bool = True
    truncated_at: int | None = None

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).ravel()
        if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        if not (np.arange(p.size) * p).sum() > 0:
            raise ValueError("mean offspring surplus m must be positive")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def mean(self) -> float:
        return float((np.arange(self.probs.size) * self.probs).sum())

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.probs.size)

    def __eq__(self, other):
        if not isinstance(other, OffspringLaw):
            return NotImplemented
        return np.array_equal(self.probs, other.probs) and self.label == other.label

    def __hash__(self):
        return hash((self.label, self.probs.tobytes()))

    def generating(self, s):
        """``f(s) = E s^(L+1)``."""
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for k in range(self.probs.size - 1, -1, -1):
            out = out * s + self.probs[k]
        return out * s

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.probs.size == 1:
            return np.zeros(size, dtype=np.int64)
        if np.count_nonzero(self.probs) == 1:
            return np.full(size, int(np.flatnonzero(self.probs)[0]), dtype=np.int64)
        return rng.choice(self.probs.size, size=size, p=self.probs).astype(np.int64)

    def size_biased(self) -> "OffspringLaw":
        """Law of ``A`` with ``P(A = k) = (k+1) p_k / (m+1)``."""
        q = (np.arange(self.probs.size) + 1) * self.probs / (self.mean + 1)
        q = q / q.sum()
        return OffspringLaw(q, label=f"size_biased({self.label})", llogl_finite=self.llogl_finite,
                            llog2l_finite=self.llog2l_finite, truncated_at=self.truncated_at)

    def to_dict(self) -> dict:
        return {"probs": self.probs.tolist(), "label": self.label, "llogl_finite": self.llogl_finite,
                "llog2l_finite": self.llog2l_finite, "truncated_at": self.truncated_at}

    @classmethod
    def binary(cls) -> "OffspringLaw":
        """Binary branching, ``L = 1``."""
        return cls([0.0, 1.0], label="binary")

    @classmethod
    def from_probs(cls, probs, label="custom") -> "OffspringLaw":
        return cls(np.asarray(probs, dtype=float), label=label)

    @classmethod
    def log_tail(cls, b: float, support: int = MAX_SUPPORT) -> "OffspringLaw":
        """``p_k ∝ 1/(k^2 log(k+1)^b)``, ``k >= 1``, truncated at ``support`` and renormalised.

        Untruncated, ``E[L log+ L] < inf`` iff ``b > 2`` and
        ``E[L (log+ L)^2] < inf`` iff ``b > 3``.
        """
        k = np.arange(support + 1, dtype=float)
        p = np.zeros(support + 1)
        p[1:] = 1.0 / (k[1:] ** 2 * np.log(k[1:] + 1) ** b)
        p /= p.sum()
        return cls(p, label=f"log_tail(b={b!r})", llogl_finite=b > 2, llog2l_finite=b > 3, truncated_at=support)
