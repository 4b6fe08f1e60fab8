"""The planar counterexample: drift ``a(x) = A x`` with ``A = [[1, 1], [1, 1]]``.

Here ``exp(A t)`` has entries ``(e^{2t} +- 1) / 2`` and the (1, 1) entry of the
derivative reduces to a product of scalars

    f_t(x) = c(t - tau(t)) * c(sigma) * prod_k c(tau_k - sigma_k),
    c(l) = (e^{2 l} + 1) / 2,

with ``f_t(x) = c(t)`` before the first hit.  The zeros of the normal
coordinate before ``t`` cut ``[0, t]`` into segments and ``f_t`` is the
product of ``c`` over the segment lengths.  As ``x1`` grows the zero set
shrinks, segments merge and ``f_t`` jumps up by at least
``(e^{2(tau - s)} - 1)(e^{2(s - sigma)} - 1) / 4`` for a removed zero ``s``
inside the merged segment ``(sigma, tau)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .excursions import ExcursionDecomposition
from .grid import TimeGrid
from .noise import sample_noise
from .rsde import DriftSpec, format_float, simulate_batch

A = np.array([[1.0, 1.0], [1.0, 1.0]])
DRIFT = DriftSpec.linear(A)

JUMP_FLOOR = 1e-3
JUMP_TREND_FACTOR = 5.0
TREND_WINDOW = 8


def factor(length):
    """``(e^{2 l} + 1) / 2``, always >= 1."""
    return 1.0 + 0.5 * np.expm1(2.0 * np.asarray(length, dtype=float))


def propagator(t: float) -> np.ndarray:
    c, s = factor(t), 0.5 * math.expm1(2.0 * t)
    return np.array([[c, s], [s, c]])


def f_closed_form(dec: ExcursionDecomposition, t: float) -> float:
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t!r}")
    sigma = dec.sigma0
    if t < sigma:
        return float(factor(t))
    k = dec.grid.index(t)
    times = dec.grid.times
    tau = times[dec.zero_idx[np.searchsorted(dec.zero_idx, k, side="right") - 1]]
    value = factor(t - tau) * factor(sigma)
    for a, b in dec.completed(k):
        value *= factor(times[b] - times[a])
    return float(value)


def segment_lengths(zero_idx: np.ndarray, k: int, dt: float) -> np.ndarray:
    """Lengths of the pieces of ``[0, t_k]`` cut at the zeros at or before ``k``."""
    z = zero_idx[zero_idx <= k]
    cuts = np.concatenate([[0], z, [k]])
    return np.diff(cuts) * dt


def lemma4_check(a_values) -> tuple[float, float, float]:
    """``prod (e^{a_i} + 1)/2`` against ``(e^{sum a_i} + 1)/2``; returns ``(lhs, rhs, rhs - lhs)``.

    Raises ``ArithmeticError`` if two or more terms fail the strict inequality.
    """
    a = np.asarray(a_values, dtype=float).ravel()
    if len(a) == 0 or np.any(~(a > 0)) or not np.all(np.isfinite(a)):
        raise ValueError("a_values must be finite and positive")
    lhs = float(np.prod(factor(a / 2.0)))
    rhs = float(factor(a.sum() / 2.0))
    margin = rhs - lhs
    if len(a) >= 2 and not margin > 0:
        raise ArithmeticError(f"product {lhs!r} is not below {rhs!r}")
    return lhs, rhs, margin


def merge_bound(removed_time: float, sigma: float, tau: float) -> float:
    return 0.25 * math.expm1(2.0 * (tau - removed_time)) * math.expm1(2.0 * (removed_time - sigma))


@dataclass
class Jump:
    index: int  # jump between x1_grid[index] and x1_grid[index + 1]
    x_left: float
    x_right: float
    size: float
    lower_bound: float
    threshold: float


@dataclass
class ScanReport:
    t: float
    x2: float
    seed: int
    x1_grid: np.ndarray
    f_values: np.ndarray
    hit: np.ndarray  # sigma(x) < t
    jumps: list[Jump] = field(default_factory=list)
    monotonicity_violations: int = 0
    nesting_violations: int = 0
    merge_events: int = 0
    merge_sign_violations: int = 0
    bound_violations: int = 0

    @property
    def hit_fraction(self) -> float:
        return float(self.hit.mean())

    @property
    def vacuous(self) -> bool:
        return not self.hit.any()

    @property
    def hit_jumps(self) -> list[Jump]:
        """Jumps whose left end point hits the boundary before ``t``.

        The left (smaller ``x1``) point owns the zeros that disappear across
        the jump, so the jump sits in every neighbourhood of a hit point.
        """
        return [j for j in self.jumps if self.hit[j.index]]

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "t": self.t,
            "x2": self.x2,
            "n_points": len(self.x1_grid),
            "hit_fraction": self.hit_fraction,
            "vacuous": self.vacuous,
            "n_jumps": len(self.jumps),
            "n_hit_jumps": len(self.hit_jumps),
            "merge_events": self.merge_events,
            "monotonicity_violations": self.monotonicity_violations,
            "nesting_violations": self.nesting_violations,
            "merge_sign_violations": self.merge_sign_violations,
            "bound_violations": self.bound_violations,
            "jumps": [
                {
                    "x_left": j.x_left,
                    "x_right": j.x_right,
                    "size": j.size,
                    "lower_bound": j.lower_bound,
                    "threshold": j.threshold,
                }
                for j in self.jumps
            ],
        }

    def to_csv(self, path) -> None:
        flags = np.zeros(len(self.x1_grid), dtype=int)
        for j in self.jumps:
            flags[j.index + 1] = 1
        with open(path, "w", newline="") as fh:
            fh.write("x1,f,jump_flag\n")
            for x, f, flag in zip(self.x1_grid, self.f_values, flags):
                fh.write(f"{format_float(x)},{format_float(f)},{flag}\n")

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1)
            fh.write("\n")


def local_trend(diffs: np.ndarray, i: int, window: int = TREND_WINDOW) -> float:
    """Median adjacent difference around position ``i``, excluding ``i`` itself."""
    around = np.concatenate([diffs[max(0, i - window) : i], diffs[i + 1 : i + 1 + window]])
    return float(np.median(np.abs(around))) if len(around) else 0.0


def scan_discontinuity(
    x1_range: tuple[float, float],
    n_points: int,
    x2: float,
    t: float,
    seed: int,
    dt: float = 1e-4,
    stream: int = 0,
) -> ScanReport:
    """``f_t(., x2)`` on a uniform ``x1`` grid, every start driven by one noise path."""
    if not x2 > 0:
        raise ValueError(f"x2 must be positive, got {x2!r}")
    if n_points < 3:
        raise ValueError("n_points must be >= 3")
    grid = TimeGrid.from_dt(t, dt)
    x1 = np.linspace(x1_range[0], x1_range[1], n_points)
    starts = np.column_stack([x1, np.full(n_points, x2)])
    noise = sample_noise(grid, 2, seed, stream)
    zeros, _ = simulate_batch(starts, DRIFT, noise, record="zeros")
    zero_sets = [np.flatnonzero(col) for col in zeros.T]
    k = grid.n_steps
    f = np.array([np.prod(factor(segment_lengths(z, k, grid.dt))) for z in zero_sets])
    hit = np.array([len(z) > 0 and z[0] < k for z in zero_sets])
    report = ScanReport(float(t), float(x2), int(seed), x1, f, hit)

    diffs = np.diff(f)
    report.monotonicity_violations = int(np.sum(diffs < 0))
    for i, df in enumerate(diffs):
        za, zb = zero_sets[i], zero_sets[i + 1]
        if not np.all(np.isin(zb, za)):
            report.nesting_violations += 1
        removed = np.setdiff1d(za, zb)
        lower = 0.0
        if len(removed):
            report.merge_events += 1
            if not df > 0:
                report.merge_sign_violations += 1
            cuts = np.concatenate([[0], zb, [k]])
            for r in removed:
                pos = np.searchsorted(cuts, r)
                lower = max(lower, merge_bound(r * grid.dt, cuts[pos - 1] * grid.dt, cuts[pos] * grid.dt))
            if df < lower * (1 - 1e-9) - 1e-12:
                report.bound_violations += 1
        threshold = max(JUMP_TREND_FACTOR * local_trend(diffs, i), JUMP_FLOOR)
        if df > threshold:
            report.jumps.append(Jump(i, float(x1[i]), float(x1[i + 1]), float(df), lower, threshold))
    return report


def nondifferentiability_experiment(
    region: tuple[float, float, float],
    t: float,
    n_seeds: int,
    n_points: int = 256,
    n_blocks: int = 4,
    dt: float = 1e-4,
    seed0: int = 0,
    workers: int = 1,
) -> dict:
    """Per seed, look for jumps of ``f_t(., x2)`` inside the part of the segment that hits.

    ``region = (x1_lo, x1_hi, x2)``.  The hit part is further split into
    ``n_blocks`` consecutive blocks of grid points; a seed counts as
    "everywhere" when every block with at least two points holds a jump.
    """
    from .runner import parallel_map

    x1_lo, x1_hi, x2 = region
    seeds = list(range(seed0, seed0 + n_seeds))
    reports = parallel_map(
        _scan_task, [((x1_lo, x1_hi), n_points, x2, t, s, dt) for s in seeds], workers
    )
    return summarize_scans(reports, n_blocks)


def summarize_scans(reports: list[ScanReport], n_blocks: int = 4) -> dict:
    """Seed-level statistics over scans of the same segment."""
    per_seed = []
    for rep in reports:
        hit_idx = np.flatnonzero(rep.hit)
        jump_at = {j.index for j in rep.hit_jumps}
        blocks = [b for b in np.array_split(hit_idx, n_blocks) if len(b) >= 2]
        everywhere = bool(blocks) and all(any(i in jump_at for i in b) for b in blocks)
        per_seed.append(
            {
                "seed": rep.seed,
                "hit_points": int(len(hit_idx)),
                "hit_jumps": len(rep.hit_jumps),
                "everywhere": everywhere,
                "monotonicity_violations": rep.monotonicity_violations,
            }
        )
    live = [r for r in per_seed if r["hit_points"] >= 1]
    n_jump = sum(r["hit_jumps"] > 0 for r in live)
    n_every = sum(r["everywhere"] for r in live)
    first = reports[0] if reports else None
    return {
        "region": [float(first.x1_grid[0]), float(first.x1_grid[-1]), first.x2] if first else None,
        "t": first.t if first else None,
        "n_seeds": len(reports),
        "n_points": len(first.x1_grid) if first else 0,
        "vacuous": not live,
        "n_with_hits": len(live),
        "n_with_jump": n_jump,
        "n_everywhere": n_every,
        "fraction_with_jump": n_jump / len(live) if live else None,
        "fraction_everywhere": n_every / len(live) if live else None,
        "monotonicity_violations": sum(r["monotonicity_violations"] for r in per_seed),
        "per_seed": per_seed,
    }


def _scan_task(args):
    return scan_discontinuity(*args)
