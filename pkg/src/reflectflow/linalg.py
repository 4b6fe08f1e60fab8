"""Small dense matrix kernels: exponentials, norms and time-ordered propagators.

Matrices are plain ``numpy`` arrays of shape ``(d, d)``; a matrix-valued
function sampled on a grid is an array of shape ``(n + 1, d, d)``.

The propagator ``E(s, t)`` solves ``dE/dt = alpha(t) E``, ``E(s, s) = I``.
On a grid it is the ordered product of one-step maps ``M_k`` (classical RK4
with ``alpha`` interpolated linearly between samples), so the cocycle
``E(s, t) = E(u, t) E(s, u)`` holds up to round-off for grid times.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .grid import TimeGrid

MAX_DIM = 16
# induced 2-norm up to this size, Frobenius above (still sub-multiplicative)
SVD_NORM_MAX_DIM = 8

_PADE_ORDER = 6
_PADE_COEFFS = np.array(
    [
        factorial(2 * _PADE_ORDER - k)
        * factorial(_PADE_ORDER)
        / (factorial(2 * _PADE_ORDER) * factorial(k) * factorial(_PADE_ORDER - k))
        for k in range(_PADE_ORDER + 1)
    ]
)
_PADE_THETA = 0.5


def as_square(a, name: str = "matrix") -> np.ndarray:
    m = np.array(a, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if not 1 <= m.shape[0] <= MAX_DIM:
        raise ValueError(f"{name} dimension {m.shape[0]} outside 1..{MAX_DIM}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def projections(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P, Q)``: P keeps the tangential coordinates, Q the normal one."""
    if not 1 <= d <= MAX_DIM:
        raise ValueError(f"dimension {d} outside 1..{MAX_DIM}")
    p = np.eye(d)
    p[-1, -1] = 0.0
    return p, np.eye(d) - p


def operator_norm(a) -> float:
    """Induced 2-norm for d <= 8, Frobenius norm (an upper bound) above."""
    m = as_square(a)
    if m.shape[0] <= SVD_NORM_MAX_DIM:
        return float(np.linalg.norm(m, 2))
    return float(np.linalg.norm(m, "fro"))


def operator_norms(stack: np.ndarray) -> np.ndarray:
    """Row-wise :func:`operator_norm` for an array of shape ``(n, d, d)``."""
    stack = np.asarray(stack, dtype=float)
    if stack.shape[-1] <= SVD_NORM_MAX_DIM:
        return np.linalg.norm(stack, 2, axis=(-2, -1))
    return np.linalg.norm(stack, "fro", axis=(-2, -1))


def mat_exp(a, t: float = 1.0) -> np.ndarray:
    """``exp(a * t)`` by scaling and squaring with a diagonal Pade(6, 6) approximant."""
    m = as_square(a)
    if not np.isfinite(t) or t < 0:
        raise ValueError(f"t must be finite and non-negative, got {t!r}")
    x = m * t
    d = x.shape[0]
    norm1 = np.abs(x).sum(axis=0).max()
    s = 0
    if norm1 > _PADE_THETA:
        s = int(np.ceil(np.log2(norm1 / _PADE_THETA)))
        x = x / 2.0**s
    num = np.zeros_like(x)
    den = np.zeros_like(x)
    power = np.eye(d)
    for k, c in enumerate(_PADE_COEFFS):
        num += c * power
        den += (-1) ** k * c * power
        power = power @ x
    r = np.linalg.solve(den, num)
    for _ in range(s):
        r = r @ r
    if not np.all(np.isfinite(r)):
        raise FloatingPointError("matrix exponential overflowed")
    return r


def sample(alpha, grid: TimeGrid) -> np.ndarray:
    """Sample a matrix-valued function on ``grid``; arrays pass through after checks."""
    if callable(alpha):
        vals = np.array([np.asarray(alpha(t), dtype=float) for t in grid.times])
    else:
        vals = np.asarray(alpha, dtype=float)
        if vals.ndim == 2:
            vals = np.broadcast_to(vals, (grid.n_steps + 1,) + vals.shape)
    if vals.ndim != 3 or vals.shape[0] != grid.n_steps + 1 or vals.shape[1] != vals.shape[2]:
        raise ValueError(f"alpha samples have shape {vals.shape}, grid needs ({grid.n_steps + 1}, d, d)")
    if not np.all(np.isfinite(vals)):
        raise ValueError("alpha has non-finite samples")
    return vals


def step_maps(alpha: np.ndarray, dt: float) -> np.ndarray:
    """One-step RK4 propagators ``M_k`` over ``[t_k, t_{k+1}]``, shape ``(n, d, d)``.

    ``alpha`` at the half step is the mean of the two neighbouring samples.
    """
    a0 = alpha[:-1]
    a1 = alpha[1:]
    am = 0.5 * (a0 + a1)
    eye = np.eye(alpha.shape[-1])
    k1 = a0
    k2 = am @ (eye + 0.5 * dt * k1)
    k3 = am @ (eye + 0.5 * dt * k2)
    k4 = a1 @ (eye + dt * k3)
    return eye + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def chain(maps: np.ndarray, i0: int, i1: int) -> np.ndarray:
    """Ordered product ``M_{i1-1} ... M_{i0}`` (identity when ``i0 == i1``)."""
    if i1 < i0:
        raise ValueError(f"chain needs i0 <= i1, got {i0} > {i1}")
    out = np.eye(maps.shape[-1])
    for k in range(i0, i1):
        out = maps[k] @ out
    return out


def ordered_product(factors, dim: int | None = None) -> np.ndarray:
    """Product of ``factors`` listed in increasing order; later factors act on the left."""
    factors = list(factors)
    if not factors and dim is None:
        raise ValueError("empty product needs an explicit dimension")
    out = np.eye(dim if dim is not None else np.shape(factors[0])[0])
    for f in factors:
        out = np.asarray(f) @ out
    return out


@dataclass(frozen=True)
class Propagator:
    s: float
    t: float
    matrix: np.ndarray


def solve_propagator(alpha, grid: TimeGrid, s: float, t: float) -> Propagator:
    """Fundamental solution ``E(s, t)`` of ``dE/dt = alpha(t) E`` between grid times.

    RK4 on the sampling grid, global error O(dt**4).
    """
    if s > t:
        raise ValueError(f"propagator needs s <= t, got s={s!r} > t={t!r}")
    i0, i1 = grid.index(s), grid.index(t)
    vals = sample(alpha, grid)
    maps = step_maps(vals[i0 : i1 + 1], grid.dt)
    return Propagator(float(s), float(t), chain(maps, 0, i1 - i0))
