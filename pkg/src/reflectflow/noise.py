"""Reproducible Brownian increments from a counter-based generator.

Every noise path is drawn from a Philox stream keyed by ``(seed, stream)``,
so the same key gives bit-identical increments no matter which process or
in which order paths are generated.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import TimeGrid


@dataclass(frozen=True)
class NoisePath:
    grid: TimeGrid
    increments: np.ndarray  # (n_steps, d), variance dt per entry
    seed: int
    stream: int = 0

    @property
    def dim(self) -> int:
        return self.increments.shape[1]

    @cached_property
    def values(self) -> np.ndarray:
        """Cumulative sums ``w(t_k)``, shape ``(n_steps + 1, d)``, with ``w(0) = 0``."""
        w = np.zeros((self.grid.n_steps + 1, self.dim))
        np.cumsum(self.increments, axis=0, out=w[1:])
        return w


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_noise(grid: TimeGrid, d: int, seed: int, stream: int = 0) -> NoisePath:
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    z = generator(seed, stream).standard_normal((grid.n_steps, d))
    return NoisePath(grid, z * np.sqrt(grid.dt), int(seed), int(stream))
