"""Zero sets and excursion intervals of the normal coordinate on a grid.

Zeros are grid points where ``beta == 0.0`` exactly; the reflection scheme
produces exact zeros, so there is no tolerance band.  Every pair of
consecutive zeros bounds one excursion interval, including pairs of adjacent
grid points: the path between them is not resolved, and treating the gap as
an excursion of length ``dt`` keeps the zero set a finite set of points.  A
positive run after the last zero is an excursion still open at ``T`` and is
stored with right end ``inf``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import TimeGrid

_NO_PAIRS = np.zeros((0, 2), dtype=np.int64)


@dataclass(frozen=True)
class ExcursionDecomposition:
    grid: TimeGrid
    zero_idx: np.ndarray
    interval_idx: np.ndarray  # (k, 2) grid indices; right index -1 marks an open excursion
    dropped_idx: np.ndarray = field(default_factory=lambda: _NO_PAIRS)

    @property
    def sigma0(self) -> float:
        return float(self.grid.times[self.zero_idx[0]]) if len(self.zero_idx) else math.inf

    @property
    def sigma0_index(self) -> int | None:
        return int(self.zero_idx[0]) if len(self.zero_idx) else None

    @property
    def intervals(self) -> list[tuple[float, float]]:
        t = self.grid.times
        return [(float(t[a]), math.inf if b < 0 else float(t[b])) for a, b in self.interval_idx]

    @property
    def zero_measure(self) -> float:
        return len(self.zero_idx) * self.grid.dt

    @property
    def zero_times(self) -> np.ndarray:
        return self.grid.times[self.zero_idx]

    def completed(self, upto: int | None = None) -> np.ndarray:
        """Closed excursions ``(a, b)`` with ``b <= upto`` (grid indices)."""
        pairs = self.interval_idx[self.interval_idx[:, 1] >= 0]
        if upto is not None:
            pairs = pairs[pairs[:, 1] <= upto]
        return pairs

    def last_zero_indices(self) -> np.ndarray:
        """For each grid index, the last zero index at or before it; -1 before the first hit."""
        marks = np.full(self.grid.n_steps + 1, -1, dtype=np.int64)
        marks[self.zero_idx] = self.zero_idx
        return np.maximum.accumulate(marks)

    def to_dict(self) -> dict:
        def num(v):
            return None if math.isinf(v) else v

        return {
            "sigma0": num(self.sigma0),
            "intervals": [[s, num(t)] for s, t in self.intervals],
            "zero_measure": self.zero_measure,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def decompose(beta, grid: TimeGrid, atol: float = 0.0) -> ExcursionDecomposition:
    """Zeros are points with ``beta <= atol``; the default 0 suits reflected paths, which hit 0.0 exactly."""
    if not atol >= 0:
        raise ValueError(f"atol must be >= 0, got {atol!r}")
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (grid.n_steps + 1,):
        raise ValueError(f"beta has shape {beta.shape}, grid needs ({grid.n_steps + 1},)")
    if np.any(beta < 0) or not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite and non-negative")
    return from_zeros(np.flatnonzero(beta <= atol), grid)


def from_zeros(zero_idx, grid: TimeGrid) -> ExcursionDecomposition:
    zero_idx = np.asarray(zero_idx, dtype=np.int64)
    if len(zero_idx) == 0:
        return ExcursionDecomposition(grid, zero_idx, _NO_PAIRS)
    pairs = np.column_stack([zero_idx[:-1], zero_idx[1:]])
    if zero_idx[-1] < grid.n_steps:
        pairs = np.vstack([pairs, [[zero_idx[-1], -1]]])
    return ExcursionDecomposition(grid, zero_idx, pairs.astype(np.int64))


def last_zero(dec: ExcursionDecomposition, t: float) -> float:
    """Latest zero time at or before ``t``."""
    if not t >= dec.sigma0:
        raise ValueError(f"last zero is undefined before the first hit (t={t!r} < sigma0={dec.sigma0!r})")
    k = min(int(math.floor(t / dec.grid.dt + 1e-9)), dec.grid.n_steps)
    pos = np.searchsorted(dec.zero_idx, k, side="right") - 1
    return float(dec.grid.times[dec.zero_idx[pos]])


def interval_lengths(dec: ExcursionDecomposition, pairs: np.ndarray) -> np.ndarray:
    t = dec.grid.times
    right = np.where(pairs[:, 1] < 0, np.inf, t[np.maximum(pairs[:, 1], 0)])
    return right - t[pairs[:, 0]]


def truncate(dec: ExcursionDecomposition, min_length: float) -> tuple[ExcursionDecomposition, float]:
    """Drop excursions shorter than ``min_length``; returns ``(kept, dropped total length)``.

    Open excursions have infinite length and are never dropped.  The zero
    set is untouched, so last-zero times keep their meaning.
    """
    if not min_length >= 0:
        raise ValueError(f"min_length must be >= 0, got {min_length!r}")
    if min_length == 0 or len(dec.interval_idx) == 0:
        return dec, 0.0
    lengths = interval_lengths(dec, dec.interval_idx)
    # round-off slack so min_length = k * dt keeps excursions of k steps
    short = lengths < min_length - 1e-9 * dec.grid.dt
    dropped = dec.interval_idx[short]
    kept = replace(
        dec,
        interval_idx=dec.interval_idx[~short],
        dropped_idx=np.vstack([dec.dropped_idx, dropped]),
    )
    return kept, float(lengths[short].sum())
