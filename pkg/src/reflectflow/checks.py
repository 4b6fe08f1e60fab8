"""Acceptance checks, runnable at two sizes.

``full`` uses the sample sizes and grids stated for each criterion; ``quick``
shrinks the sample counts (never the tolerances) so the whole suite runs in
about a minute.  Every check reports what it observed next to what it
expected, plus the wall time against its budget.
"""

from __future__ import annotations

import contextlib
import functools
import io
import math
import tempfile
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import example2d
from .derivative import (
    disagreement,
    finite_difference,
    pi_map,
    product_formula,
    product_tail_bound,
    solve_picard,
    solve_product,
    derivative_for_flow,
)
from .excursions import decompose, from_zeros
from .grid import TimeGrid
from .linalg import mat_exp, operator_norm, operator_norms, ordered_product
from .noise import generator, sample_noise
from .rsde import DriftSpec, simulate_batch, solve_rsde

# stream ids used for check-specific randomness, kept apart from path noise (stream 0)
_PARAM_STREAM = 7


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    observed: str
    expected: str
    seconds: float
    budget: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (
            f"[{tag}] {self.number:2d} {self.name}: observed {self.observed}; "
            f"expected {self.expected}; {self.seconds:.1f}s (budget {self.budget:g}s)"
        )

    def to_dict(self) -> dict:
        return dict(self.__dict__)


SIZES = {
    "quick": dict(skorokhod=20, fd=20, handcrafted=20, simulated=10, tail=100, pi=100,
                  lemma4=1000, mono_seeds=20, scan_seeds=10, scalar=100),
    "full": dict(skorokhod=100, fd=100, handcrafted=50, simulated=50, tail=100, pi=100,
                 lemma4=1000, mono_seeds=100, scan_seeds=100, scalar=100),
}


def _rng(seed: int = 0):
    return generator(seed, _PARAM_STREAM)


# 1 -------------------------------------------------------------------------


def check_skorokhod(n_seeds: int):
    grid = TimeGrid.from_dt(1.0, 1e-4)
    drift = DriftSpec.zero(1)
    mismatched = 0
    for seed in range(n_seeds):
        noise = sample_noise(grid, 1, seed)
        path = solve_rsde([0.0], drift, noise)
        w = noise.values[:, 0]
        if not np.array_equal(path.beta, w - np.minimum.accumulate(w)):
            mismatched += 1
    return mismatched == 0, f"{mismatched}/{n_seeds} paths differ bitwise", "0 differing paths"


# 2 -------------------------------------------------------------------------


def check_fd_cases(n_seeds: int, h: float = 1e-3, tol: float = 1e-9):
    grid = TimeGrid.from_dt(1.0, 1e-4)
    drift = DriftSpec.zero(1)
    rng = _rng(2)
    worst, cases, wrong = 0.0, 0, 0
    margin = 10 * h * 1.01
    for seed in range(n_seeds):
        noise = sample_noise(grid, 1, seed)
        crit = -noise.values[:, 0].min()
        xs = [(crit + margin + rng.uniform(0, 1), 1.0)]
        if crit - margin > h:
            xs.append((rng.uniform(h, crit - margin), 0.0))
        for x, want in xs:
            est = finite_difference([x], h, 0, drift, noise, 1.0)
            err = abs(float(est.column[0]) - want)
            worst = max(worst, err)
            cases += 1
            wrong += err > tol
    return wrong == 0, f"{wrong}/{cases} cases off, max |FD - case| = {worst:.2e}", f"all within {tol:g}"


# 3 -------------------------------------------------------------------------


def check_closed_form():
    a = np.array([[1.0, 1.0], [1.0, 1.0]])
    worst = 0.0
    for t in (0.1, 0.5, 1.0, 2.0):
        e = mat_exp(a, t)
        c, s = (math.exp(2 * t) + 1) / 2, (math.exp(2 * t) - 1) / 2
        exact = np.array([[c, s], [s, c]])
        worst = max(worst, float(np.max(np.abs(e - exact) / np.abs(exact))))
    return worst < 1e-10, f"max relative error {worst:.2e}", "< 1e-10"


# 4 -------------------------------------------------------------------------


def handcrafted_case(rng, grid: TimeGrid):
    """Random ``alpha = A0 + A1 sin(w t)`` and a ``beta`` vanishing at 1-5 random grid points."""
    d = int(rng.integers(2, 5))
    n_zero = int(rng.integers(1, 6))
    zeros = np.sort(rng.choice(np.arange(1, grid.n_steps), size=n_zero, replace=False))
    k = np.arange(grid.n_steps + 1)
    beta = np.min(np.abs(k[:, None] - zeros[None, :]), axis=1) * grid.dt
    a0 = rng.uniform(-1, 1, (d, d))
    a1 = rng.uniform(-1, 1, (d, d))
    w = rng.uniform(0.5, 2 * math.pi)
    alpha = a0 + a1 * np.sin(w * grid.times)[:, None, None]
    return alpha, decompose(beta, grid)


def check_handcrafted(n_cases: int, dt: float = 1e-4):
    grid = TimeGrid.from_dt(1.0, dt)
    rng = _rng(4)
    worst = 0.0
    for _ in range(n_cases):
        alpha, dec = handcrafted_case(rng, grid)
        worst = max(worst, disagreement(solve_picard(alpha, dec, tol=1e-12), solve_product(alpha, dec)))
    return worst < 1e-6, f"max sup-norm disagreement {worst:.2e} over {n_cases} cases", "< 1e-6"


# 5 -------------------------------------------------------------------------


def hitting_paths(n_paths: int, dt: float = 1e-4, max_seed: int = 10_000):
    """Planar-example paths that reach the boundary before ``T = 1``, seeds in order."""
    grid = TimeGrid.from_dt(1.0, dt)
    rng = _rng(5)
    seed = 0
    while n_paths > 0 and seed < max_seed:
        x = [rng.uniform(0.0, 0.5), rng.uniform(0.0, 0.1)]
        path = solve_rsde(x, example2d.DRIFT, sample_noise(grid, 2, seed))
        seed += 1
        if np.any(path.beta[:-1] == 0.0):
            n_paths -= 1
            yield path


def check_simulated(n_paths: int):
    worst, count = 0.0, 0
    for path in hitting_paths(n_paths):
        a = derivative_for_flow(path, example2d.DRIFT, "picard")
        b = derivative_for_flow(path, example2d.DRIFT, "product")
        worst = max(worst, disagreement(a, b, upto=1.0))
        count += 1
    ok = worst < 1e-4 and count == n_paths
    return ok, f"max disagreement {worst:.2e} over {count} paths with hits", "< 1e-4"


# 6 -------------------------------------------------------------------------


def check_tail_bound(n_families: int, n_levels: int = 20):
    rng = _rng(6)
    violations, worst_ratio, trials = 0, 0.0, 0
    for _ in range(n_families):
        d = int(rng.integers(1, 5))
        k = int(rng.integers(2, 60))
        raw = rng.normal(size=(k, d, d))
        norms = np.array([operator_norm(b) for b in raw])
        weights = rng.pareto(1.5, size=k) + 1e-3
        budget = rng.uniform(0.1, 2.0)
        gaps = weights / weights.sum() * budget
        bs = raw * (gaps / norms)[:, None, None]
        gaps = np.array([operator_norm(b) for b in bs])
        total = float(gaps.sum())
        eye = np.eye(d)
        full = ordered_product(eye + bs)
        for cut in np.quantile(gaps, np.linspace(0, 1, n_levels)):
            drop = gaps <= cut
            trunc = ordered_product(eye + bs[~drop], dim=d)
            err = operator_norm(full - trunc)
            bound = product_tail_bound(gaps[drop], total)
            trials += 1
            if err > bound:
                violations += 1
            if bound > 0:
                worst_ratio = max(worst_ratio, err / bound)
    return (
        violations == 0,
        f"{violations} violations in {trials} truncations, max error/bound {worst_ratio:.3f}",
        "0 violations",
    )


# 7 -------------------------------------------------------------------------


def check_pi_contraction(n_pairs: int):
    grid = TimeGrid.from_dt(1.0, 1e-3)
    rng = _rng(7)
    worst = 0.0
    for _ in range(n_pairs):
        d = int(rng.integers(1, 5))
        zeros = np.sort(rng.choice(grid.n_steps + 1, size=int(rng.integers(0, 40)), replace=False))
        dec = from_zeros(zeros, grid)
        x1 = np.cumsum(rng.normal(size=(grid.n_steps + 1, d, d)), axis=0) * 0.05
        x2 = x1 + rng.normal(size=x1.shape) * rng.uniform(0.01, 1)
        lhs = operator_norms(pi_map(x1, dec) - pi_map(x2, dec)).max()
        rhs = operator_norms(x1 - x2).max()
        worst = max(worst, lhs - 2 * rhs)
    return worst <= 1e-12, f"max of sup|pi x1 - pi x2| - 2 sup|x1 - x2| = {worst:.3g}", "<= 1e-12"


# 8 -------------------------------------------------------------------------


def check_lemma4(n_tuples: int):
    rng = _rng(8)
    failures, smallest = 0, math.inf
    for _ in range(n_tuples):
        a = 10.0 ** rng.uniform(-3, 0.5, size=int(rng.integers(2, 51)))
        try:
            lhs, _, margin = example2d.lemma4_check(a)
            smallest = min(smallest, margin / lhs)
        except ArithmeticError:
            failures += 1
    return failures == 0, f"{failures} failures, smallest relative margin {smallest:.2e}", "strict inequality for all"


# 9 and 10 ------------------------------------------------------------------


@functools.lru_cache(maxsize=2)
def _ordered_runs(n_seeds: int, n_pairs: int = 10):
    grid = TimeGrid.from_dt(1.0, 1e-4)
    n = grid.n_steps
    stats = dict(order=0, strict=0, nesting=0, not_strict=0, pairs=0, hit_pairs=0)
    for seed in range(n_seeds):
        rng = _rng(1000 + seed)
        lo = np.column_stack([rng.uniform(0, 1, n_pairs), rng.uniform(0, 0.3, n_pairs)])
        hi = lo + np.column_stack([rng.uniform(0.01, 0.5, n_pairs), rng.uniform(0, 0.3, n_pairs)])
        states, _ = simulate_batch(np.vstack([lo, hi]), example2d.DRIFT, sample_noise(grid, 2, seed))
        x, y = states[:, :n_pairs], states[:, n_pairs:]
        stats["order"] += int(np.sum(np.any(y < x, axis=(0, 2))))
        stats["strict"] += int(np.sum(np.any(y[..., 0] <= x[..., 0], axis=0)))
        zx, zy = x[..., 1] == 0.0, y[..., 1] == 0.0
        stats["nesting"] += int(np.sum(np.any(zy & ~zx, axis=0)))
        hits = np.any(zx[:n], axis=0)
        strict = np.any(zx & ~zy, axis=0)
        stats["not_strict"] += int(np.sum(hits & ~strict))
        stats["pairs"] += n_pairs
        stats["hit_pairs"] += int(hits.sum())
    return stats


def check_monotone(n_seeds: int):
    s = _ordered_runs(n_seeds)
    ok = s["order"] == 0 and s["strict"] == 0
    return ok, (
        f"{s['order']} pairs out of componentwise order, {s['strict']} without strict first-coordinate "
        f"order, of {s['pairs']}"
    ), "0 and 0"


def check_nesting(n_seeds: int):
    s = _ordered_runs(n_seeds)
    ok = s["nesting"] == 0 and s["not_strict"] == 0
    return ok, (
        f"{s['nesting']} pairs where the larger start has an extra zero, {s['not_strict']} of "
        f"{s['hit_pairs']} hitting pairs without strict inclusion"
    ), "0 and 0"


# 11 ------------------------------------------------------------------------


def check_scan(n_seeds: int, workers: int = 1):
    from .runner import parallel_map

    args = [((0.0, 1.0), 512, 0.1, 1.0, s, 1e-4) for s in range(n_seeds)]
    reports = parallel_map(example2d._scan_task, args, workers)
    with_jump = sum(1 for r in reports if r.hit_jumps)
    mono = sum(r.monotonicity_violations for r in reports)
    need = math.ceil(0.95 * n_seeds)
    hits = sum(1 for r in reports if not r.vacuous)
    # largest step of f next to a hit point, for hit seeds that show no jump
    small = [float(np.diff(r.f_values)[r.hit[:-1]].max(initial=0.0)) for r in reports if not r.vacuous and not r.hit_jumps]
    note = f", largest step in hit seeds without a jump {max(small):.1e}" if small else ""
    return (
        with_jump >= need and mono == 0,
        f"{with_jump}/{n_seeds} seeds with a jump at hit points ({hits} seeds hit), "
        f"{mono} monotonicity violations{note}",
        f">= {need}/{n_seeds} seeds and 0 violations",
    )


# 12 ------------------------------------------------------------------------


def check_scalar(n_cases: int, dt: float = 1e-3):
    grid = TimeGrid.from_dt(1.0, dt)
    rng = _rng(12)
    decs = []
    for _ in range(n_cases // 2):
        zeros = np.sort(rng.choice(grid.n_steps + 1, size=int(rng.integers(0, 30)), replace=False))
        decs.append(from_zeros(zeros, grid))
    for path in hitting_paths(n_cases - len(decs), dt=dt):
        decs.append(decompose(path.beta, grid))
    worst = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for dec in decs:
            for t in (grid.t_end, float(grid.times[rng.integers(1, grid.n_steps)])):
                prod = product_formula(example2d.A, dec, t, min_length=0.0).matrix[0, 0]
                worst = max(worst, abs(example2d.f_closed_form(dec, t) - prod))
    return worst < 1e-9, f"max |closed form - product| = {worst:.2e} over {len(decs)} decompositions", "< 1e-9"


# 13 ------------------------------------------------------------------------


def _tree_bytes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def check_determinism():
    from .cli import main

    ini = (
        "[model]\nd = 2\ndrift = linear\nA = 1 1; 1 1\n"
        "[grid]\nT = 1.0\ndt = 0.001\n"
        "[run]\nseeds = 0, 1, 2\nstarts = 0.2 0.05; 0.6 0.1\nmin_lengths = 0.001, 0.005, 0.02\n"
        "[scan]\nn_points = 64\nx2 = 0.1\n"
    )
    differing = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "cfg.ini").write_text(ini)
        trees = {}
        for label, workers in (("a1", 1), ("b1", 1), ("c8", 8)):
            for cmd in ("simulate", "derivative", "scan"):
                out = tmp / label / cmd
                with contextlib.redirect_stdout(io.StringIO()):
                    code = main([cmd, "--config", str(tmp / "cfg.ini"), "--out", str(out), "--workers", str(workers)])
                if code != 0:
                    differing.append(f"{cmd} exit {code}")
            trees[label] = _tree_bytes(tmp / label)
        for label in ("b1", "c8"):
            if trees[label] != trees["a1"]:
                keys = set(trees[label]) | set(trees["a1"])
                differing += [f"{label}:{k}" for k in sorted(keys) if trees[label].get(k) != trees["a1"].get(k)]
        n_files = len(trees["a1"])
    return not differing, f"{len(differing)} differences over {n_files} files x 3 runs {differing[:3]}", "byte-identical"


# ---------------------------------------------------------------------------

CHECKS = [
    (1, "Skorokhod identity", 10, lambda z, w: check_skorokhod(z["skorokhod"])),
    (2, "1D derivative cases", 30, lambda z, w: check_fd_cases(z["fd"])),
    (3, "closed-form propagator", 1, lambda z, w: check_closed_form()),
    (4, "Picard/product, handcrafted zeros", 60, lambda z, w: check_handcrafted(z["handcrafted"])),
    (5, "Picard/product, simulated paths", 300, lambda z, w: check_simulated(z["simulated"])),
    (6, "product tail bound", 60, lambda z, w: check_tail_bound(z["tail"])),
    (7, "pi-map factor-2 bound", 10, lambda z, w: check_pi_contraction(z["pi"])),
    (8, "product inequality for (e^a+1)/2", 5, lambda z, w: check_lemma4(z["lemma4"])),
    (9, "monotone flow", 120, lambda z, w: check_monotone(z["mono_seeds"])),
    (10, "zero-set inclusion", 120, lambda z, w: check_nesting(z["mono_seeds"])),
    (11, "jumps of f along x1", 900, lambda z, w: check_scan(z["scan_seeds"], w)),
    (12, "scalar closed form vs product", 10, lambda z, w: check_scalar(z["scalar"])),
    (13, "determinism across runs and workers", 120, lambda z, w: check_determinism()),
]


def run_check(number: int, level: str = "quick", workers: int = 1) -> CheckResult:
    sizes = SIZES[level]
    _, name, budget, fn = next(c for c in CHECKS if c[0] == number)
    start = time.perf_counter()
    try:
        ok, observed, expected = fn(sizes, workers)
    except Exception as exc:  # a crash is a failed check, reported like any other
        ok, observed, expected = False, f"raised {type(exc).__name__}: {exc}", "no exception"
    seconds = time.perf_counter() - start
    if seconds > budget:
        ok = False
        observed += "; over time budget"
    return CheckResult(number, name, bool(ok), observed, expected, seconds, budget)


def run_checks(level: str = "quick", workers: int = 1, numbers=None) -> list[CheckResult]:
    if level not in SIZES:
        raise ValueError(f"level must be one of {sorted(SIZES)}, got {level!r}")
    numbers = [c[0] for c in CHECKS] if numbers is None else numbers
    return [run_check(k, level, workers) for k in numbers]
