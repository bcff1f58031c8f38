"""Per-round client selection: uniform without replacement, or cyclic."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError


def cohort_size(K: int, C: float) -> int:
    return max(1, int(math.floor(K * C + 1e-9)))


@dataclass(frozen=True)
class Sampler:
    """``kind`` is ``"uniform"`` or ``"cyclic"``.

    ``sample(t)`` is a pure function of ``(kind, K, C, seed, t)``.
    """

    kind: str
    K: int
    C: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform", "cyclic"):
            raise ConfigError(f"unknown sampler kind {self.kind!r}")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if not 0 < self.C <= 1:
            raise ConfigError(f"participation C must lie in (0, 1], got {self.C}")
        if self.kind == "cyclic" and self.K % self.m:
            raise ConfigError(
                f"cyclic sampling needs K divisible by the cohort size ({self.K} % {self.m} != 0)"
            )

    @property
    def m(self) -> int:
        return cohort_size(self.K, self.C)

    @property
    def period(self) -> int:
        """Rounds between two participations of a client (cyclic only)."""
        return self.K // self.m

    @cached_property
    def _groups(self) -> np.ndarray:
        perm = np.random.default_rng(self.seed).permutation(self.K)
        return perm.reshape(self.period, self.m)

    def sample(self, t: int) -> np.ndarray:
        """Sorted client ids participating in round ``t`` (1-based)."""
        if t < 1:
            raise ValueError(f"round index must be >= 1, got {t}")
        if self.kind == "cyclic":
            return np.sort(self._groups[(t - 1) % self.period])
        if self.m == self.K:
            return np.arange(self.K)
        rng = np.random.default_rng([self.seed, t])
        return np.sort(rng.choice(self.K, size=self.m, replace=False))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "K": self.K, "C": self.C, "seed": self.seed}


def sample(sampler: Sampler, t: int) -> np.ndarray:
    return sampler.sample(t)
