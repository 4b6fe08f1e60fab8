"""Reflected SDEs with additive noise in the half-space {x_d >= 0}.

Scheme: one Euler step of drift plus noise on every coordinate, then the
discrete Skorokhod correction on the last coordinate only.  The last
coordinate is carried as ``z + L`` where ``z`` is the unconstrained running
sum and ``L = max(0, max_j -z_j)`` is the local time, so a step that pushes
the path below the boundary lands on exactly ``0.0`` and the local time grows
only on such steps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .grid import TimeGrid
from .linalg import as_square, operator_norm
from .noise import NoisePath

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DriftSpec:
    """Drift ``a`` and its Jacobian.

    Custom callables must be vectorized over leading axes: ``func`` maps
    ``(..., d) -> (..., d)`` and ``grad`` maps ``(..., d) -> (..., d, d)``.
    """

    dim: int
    matrix: np.ndarray | None = None
    func: Callable[[np.ndarray], np.ndarray] | None = None
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    grad_bound: float = np.inf

    @classmethod
    def linear(cls, a) -> "DriftSpec":
        m = as_square(a, "drift matrix")
        return cls(m.shape[0], matrix=m, grad_bound=operator_norm(m))

    @classmethod
    def zero(cls, d: int) -> "DriftSpec":
        return cls.linear(np.zeros((d, d)))

    @classmethod
    def custom(cls, d: int, func, grad, grad_bound: float) -> "DriftSpec":
        if grad_bound < 0:
            raise ValueError("grad_bound must be non-negative")
        return cls(d, func=func, grad=grad, grad_bound=float(grad_bound))

    @property
    def kind(self) -> str:
        return "linear" if self.matrix is not None else "custom"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.matrix is None:
            return np.asarray(self.func(x), dtype=float)
        a = self.matrix
        # fixed summation order per row, so a batch row equals a single run
        out = x[..., 0:1] * a[:, 0]
        for j in range(1, self.dim):
            out += x[..., j : j + 1] * a[:, j]
        return out

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.matrix is not None:
            return np.broadcast_to(self.matrix, x.shape[:-1] + (self.dim, self.dim)).copy()
        jac = np.asarray(self.grad(x), dtype=float)
        if not np.all(np.isfinite(jac)):
            raise ValueError("drift Jacobian is not finite along the path")
        return jac


@dataclass(frozen=True)
class ReflectedPath:
    grid: TimeGrid
    states: np.ndarray  # (n + 1, d)
    local_time: np.ndarray  # (n + 1,)
    start: np.ndarray

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def beta(self) -> np.ndarray:
        """Normal coordinate, the process whose zeros drive the derivative."""
        return self.states[:, -1]

    def to_csv(self, path) -> Path:
        path = Path(path)
        header = ",".join(["time"] + [f"x_{i + 1}" for i in range(self.dim)] + ["L"])
        table = np.column_stack([self.grid.times, self.states, self.local_time])
        with open(path, "w", newline="") as fh:
            fh.write(header + "\n")
            for row in table:
                fh.write(",".join(format_float(v) for v in row) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "ReflectedPath":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if header[0] != "time" or header[-1] != "L":
            raise ValueError(f"{path}: not a path CSV (header {header})")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        times = data[:, 0]
        grid = TimeGrid(float(times[-1]), len(times) - 1)
        states = data[:, 1:-1]
        return cls(grid, states, data[:, -1], states[0].copy())


def format_float(v: float) -> str:
    return "%.17g" % v


def skorokhod_map(z) -> tuple[np.ndarray, np.ndarray]:
    """Reflect a scalar path at 0: returns ``(z + L, L)`` with ``L`` the running max of ``-z``."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or len(z) == 0:
        raise ValueError("skorokhod_map expects a non-empty 1-D path")
    if z[0] < 0:
        raise ValueError(f"path starts outside the half-line: z[0]={z[0]!r}")
    local = np.maximum.accumulate(np.maximum(0.0, -z))
    return z + local, local


def _check_starts(xs, d: int) -> np.ndarray:
    x0 = np.array(xs, dtype=float)
    if x0.ndim == 1:
        x0 = x0[None, :]
    if x0.ndim != 2 or x0.shape[1] != d:
        raise ValueError(f"start points must have dimension {d}, got shape {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("start points must be finite")
    if np.any(x0[:, -1] < 0):
        raise ValueError("start points must lie in the closed half-space x_d >= 0")
    return x0


def simulate_batch(xs, drift: DriftSpec, noise: NoisePath, record: str = "full"):
    """Run all starts ``xs`` (m, d) under one noise path.

    ``record="full"`` returns ``(states (n+1, m, d), local_time (n+1, m))``;
    ``record="zeros"`` returns ``(zero_mask (n+1, m), final_states (m, d))``
    and keeps memory at one byte per grid point and start.
    """
    d = noise.dim
    if drift.dim != d:
        raise ValueError(f"drift dimension {drift.dim} != noise dimension {d}")
    x = _check_starts(xs, d).copy()
    m = x.shape[0]
    n = noise.grid.n_steps
    dt = noise.grid.dt
    dw = noise.increments
    if record not in ("full", "zeros"):
        raise ValueError(f"unknown record mode {record!r}")
    if m == 1 and drift.matrix is not None:
        states, ltime = _simulate_one_linear(x[0], drift.matrix, dw, dt)
        if record == "full":
            return states[:, None, :], ltime[:, None]
        return (states[:, -1] == 0.0)[:, None], states[-1:].copy()
    z = x[:, -1].copy()
    local = np.zeros(m)
    if record == "full":
        states = np.empty((n + 1, m, d))
        ltime = np.empty((n + 1, m))
        states[0] = x
        ltime[0] = 0.0
    else:
        zeros = np.empty((n + 1, m), dtype=bool)
        zeros[0] = x[:, -1] == 0.0
    for k in range(n):
        inc = drift(x) * dt + dw[k]
        x[:, :-1] += inc[:, :-1]
        z += inc[:, -1]
        np.maximum(local, -z, out=local)
        x[:, -1] = z + local
        if record == "full":
            states[k + 1] = x
            ltime[k + 1] = local
        else:
            zeros[k + 1] = x[:, -1] == 0.0
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("reflected path overflowed")
    if record == "full":
        return states, ltime
    return zeros, x


def _simulate_one_linear(x0, a, dw, dt):
    """Single start, linear drift: the batch loop on Python floats.

    Same operations in the same order as the array loop, so the result is
    bit-identical; it avoids per-step array overhead when there is one row.
    """
    d = len(x0)
    rows = a.tolist()
    x = [float(v) for v in x0]
    z = x[-1]
    local = 0.0
    states = np.empty((len(dw) + 1, d))
    ltime = np.empty(len(dw) + 1)
    states[0] = x
    ltime[0] = 0.0
    out_x, out_l = [], []
    last = d - 1
    for step in dw.tolist():
        inc = []
        for i in range(d):
            r = rows[i]
            acc = x[0] * r[0]
            for j in range(1, d):
                acc += x[j] * r[j]
            inc.append(acc * dt + step[i])
        for i in range(last):
            x[i] += inc[i]
        z += inc[last]
        if -z > local:
            local = -z
        x[last] = z + local
        out_x.append(list(x))
        out_l.append(local)
    states[1:] = out_x
    ltime[1:] = out_l
    if not np.all(np.isfinite(states)):
        raise FloatingPointError("reflected path overflowed")
    return states, ltime


def solve_rsde_shared(xs: Sequence, drift: DriftSpec, noise: NoisePath) -> list[ReflectedPath]:
    """Solve from every start in ``xs`` with the identical noise path, in input order."""
    x0 = _check_starts(xs, noise.dim)
    states, ltime = simulate_batch(x0, drift, noise)
    return [
        ReflectedPath(noise.grid, states[:, i].copy(), ltime[:, i].copy(), x0[i].copy())
        for i in range(x0.shape[0])
    ]


def solve_rsde(x, drift: DriftSpec, noise: NoisePath) -> ReflectedPath:
    return solve_rsde_shared([x], drift, noise)[0]


def lipschitz_estimate(paths: Sequence[ReflectedPath]) -> float:
    """Largest ``sup_t |phi_t(x) - phi_t(y)| / |x - y|`` over all pairs of ``paths``."""
    worst = 0.0
    for i in range(len(paths)):
        for j in range(i + 1, len(paths)):
            gap = np.linalg.norm(paths[i].start - paths[j].start)
            if gap == 0:
                continue
            spread = np.linalg.norm(paths[i].states - paths[j].states, axis=1).max()
            worst = max(worst, spread / gap)
    log.info("Lipschitz constant estimate over %d paths: %.6g", len(paths), worst)
    return worst
