"""Derivative of a reflecting flow in its initial point.

Two independent solvers for the matrix function ``gamma`` with

    P gamma(t) = P + int_0^t P alpha gamma ds
    Q gamma(t) = Q + int_0^t Q alpha gamma ds               (t < sigma)
    Q gamma(t) = int_{tau(t)}^t Q alpha gamma ds              (t >= sigma)

where ``sigma`` is the first zero of ``beta`` and ``tau(t)`` its last zero
before ``t``:

* ``solve_picard`` iterates ``gamma <- pi(I + int alpha gamma)``;
* ``product_formula`` / ``solve_product`` evaluate the ordered product

      E(tau(t), t) P [prod_k P E(sigma_k, tau_k) P] E(0, sigma)

  over the excursion intervals, later intervals on the left.

``gamma`` jumps at zeros of ``beta`` (its Q part is reset), so solutions
carry both the right-continuous values ``gamma`` and the left limits
``gamma_left`` at every grid time.  Residuals are measured with a trapezoid
rule that uses the left limit at the right end of each step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .excursions import ExcursionDecomposition, decompose, truncate
from .grid import TimeGrid
from .linalg import chain, operator_norm, operator_norms, projections, sample, step_maps
from .noise import NoisePath
from .rsde import DriftSpec, ReflectedPath, format_float, simulate_batch


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class DerivativeSolution:
    grid: TimeGrid
    gamma: np.ndarray  # (n + 1, d, d), right-continuous values
    gamma_left: np.ndarray  # (n + 1, d, d), left limits
    method: str  # "picard" or "product"
    decomposition: ExcursionDecomposition
    residual: np.ndarray  # per grid time, max of the two system residuals
    iterations: int = 0
    min_length: float = 0.0
    tail_bound: np.ndarray | None = None  # per grid time, product method only

    @property
    def dim(self) -> int:
        return self.gamma.shape[-1]

    def at(self, t: float) -> np.ndarray:
        return self.gamma[self.grid.index(t)]

    def metadata(self) -> dict:
        meta = {
            "method": self.method,
            "iterations": self.iterations,
            "max_residual": float(self.residual.max()),
            "min_length": self.min_length,
            "sigma0": self.decomposition.to_dict()["sigma0"],
            "n_intervals": int(len(self.decomposition.interval_idx)),
        }
        if self.tail_bound is not None:
            meta["tail_bound"] = float(self.tail_bound[-1])
        return meta

    def to_csv(self, path) -> None:
        d = self.dim
        cols = ["time"] + [f"g_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        cols += ["method", "residual"]
        flat = self.gamma.reshape(len(self.gamma), d * d)
        with open(path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for t, row, r in zip(self.grid.times, flat, self.residual):
                vals = [format_float(t)] + [format_float(v) for v in row]
                fh.write(",".join(vals + [self.method, format_float(r)]) + "\n")


@dataclass(frozen=True)
class ProductEvaluation:
    matrix: np.ndarray
    tail_bound: float  # bound on |truncated - untruncated| for the full matrix
    inner_tail_bound: float  # bound for the bracketed product alone
    n_factors: int
    n_dropped: int


@dataclass(frozen=True)
class OrderedFactorSet:
    """Factors ``A_k = P E(sigma_k, tau_k) P`` in interval order.

    On the range of ``P`` each factor is ``identity + B_k`` with
    ``B_k = P (E(sigma_k, tau_k) - E) P``; ``gaps`` holds ``|B_k|``.
    """

    intervals: list[tuple[float, float]]
    factors: list[np.ndarray]
    gaps: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def gap_sum(self) -> float:
        return float(self.gaps.sum())


@dataclass(frozen=True)
class FDEstimate:
    column: np.ndarray
    near_critical: bool  # the two perturbed paths have different zero sets


# -- pi map -------------------------------------------------------------------


def _last_zero_map(dec: ExcursionDecomposition) -> np.ndarray:
    return dec.last_zero_indices()


def pi_map(x_path, dec: ExcursionDecomposition) -> np.ndarray:
    """``x(t)`` before the first zero, ``P x(t) + Q (x(t) - x(tau(t)))`` after."""
    x = np.asarray(x_path, dtype=float)
    _, q = projections(x.shape[-1])
    tau = _last_zero_map(dec)
    out = x.copy()
    hit = tau >= 0
    out[hit] -= q @ x[tau[hit]]
    return out


def pi_map_left(x_path, dec: ExcursionDecomposition) -> np.ndarray:
    """Left limits of ``pi_map(x)`` at grid times (the gap before each point holds no zero)."""
    x = np.asarray(x_path, dtype=float)
    _, q = projections(x.shape[-1])
    tau = _last_zero_map(dec)
    out = x.copy()
    prev = np.empty_like(tau)
    prev[0] = -1
    prev[1:] = tau[:-1]
    hit = prev >= 0
    out[hit] -= q @ x[prev[hit]]
    return out


def _integral(alpha, gamma, gamma_left, dt) -> np.ndarray:
    """Cumulative trapezoid of ``alpha gamma`` using left limits at step ends."""
    f0 = alpha[:-1] @ gamma[:-1]
    f1 = alpha[1:] @ gamma_left[1:]
    out = np.zeros_like(gamma)
    np.cumsum(0.5 * dt * (f0 + f1), axis=0, out=out[1:])
    return out


def residuals(alpha, dec: ExcursionDecomposition, gamma, gamma_left) -> np.ndarray:
    """Per-time residual of the derivative system, trapezoid quadrature."""
    alpha = np.asarray(alpha, dtype=float)
    d = gamma.shape[-1]
    p, q = projections(d)
    integ = _integral(alpha, gamma, gamma_left, dec.grid.dt)
    r_tan = operator_norms(p @ gamma - p - p @ integ)
    tau = _last_zero_map(dec)
    normal = q @ gamma - q @ integ
    before = tau < 0
    normal[before] -= q
    normal[~before] += q @ integ[tau[~before]]
    return np.maximum(r_tan, operator_norms(normal))


# -- Picard -------------------------------------------------------------------


def _integral_steps(maps, gamma) -> np.ndarray:
    """Cumulative integral of ``alpha gamma`` with each step integrated along the flow.

    On ``[t_k, t_{k+1})`` the solution moves by the one-step propagator, so
    the step contributes ``(M_k - I) gamma(t_k)``; exact up to the RK4 error.
    """
    out = np.zeros_like(gamma)
    np.cumsum(maps @ gamma[:-1] - gamma[:-1], axis=0, out=out[1:])
    return out


def solve_picard(
    alpha,
    dec: ExcursionDecomposition,
    tol: float = 1e-12,
    max_iter: int = 200,
    quadrature: str = "step",
) -> DerivativeSolution:
    """Successive approximations from ``gamma_0 = I`` until the sup change drops below ``tol``.

    ``quadrature="step"`` integrates each step along the one-step propagator
    (O(dt^4)); ``"trapezoid"`` uses the trapezoid rule with left limits
    (O(dt^2)).  The change is measured in the Frobenius norm, an upper bound
    on the operator norm.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol!r}")
    if quadrature not in ("step", "trapezoid"):
        raise ValueError(f"unknown quadrature {quadrature!r}")
    grid = dec.grid
    alpha = sample(alpha, grid)
    d = alpha.shape[-1]
    eye = np.eye(d)
    maps = step_maps(alpha, grid.dt) if quadrature == "step" else None
    gamma = np.broadcast_to(eye, alpha.shape).copy()
    left = gamma.copy()
    change = math.inf
    for it in range(1, max_iter + 1):
        if maps is not None:
            x = eye + _integral_steps(maps, gamma)
        else:
            x = eye + _integral(alpha, gamma, left, grid.dt)
        new, new_left = pi_map(x, dec), pi_map_left(x, dec)
        change = max(
            np.linalg.norm(new - gamma, axis=(1, 2)).max(),
            np.linalg.norm(new_left - left, axis=(1, 2)).max(),
        )
        gamma, left = new, new_left
        if not np.isfinite(change):
            break
        if change < tol:
            res = residuals(alpha, dec, gamma, left)
            return DerivativeSolution(grid, gamma, left, "picard", dec, res, iterations=it)
    raise ConvergenceError(
        f"Picard iteration did not converge in {max_iter} iterations (last change {change:.3g})",
        residual=float(change),
        iterations=max_iter,
    )


# -- product representation ---------------------------------------------------


def product_tail_bound(dropped: Sequence[float], total: float) -> float:
    """``sum(dropped) * exp(total)``: distance bound between a truncated and any finer product."""
    dropped = np.asarray(dropped, dtype=float)
    if np.any(dropped < 0) or total < 0:
        raise ValueError("factor norms must be non-negative")
    if len(dropped) == 0:
        return 0.0
    return float(dropped.sum() * math.exp(total))


def _split_factors(dec: ExcursionDecomposition, min_length: float, upto: int):
    """Completed excursions ending at or before index ``upto``: (kept, dropped) index pairs."""
    kept, _ = truncate(dec, min_length)
    k = kept.completed(upto)
    dropped = kept.dropped_idx
    dropped = dropped[(dropped[:, 1] >= 0) & (dropped[:, 1] <= upto)]
    return k, dropped


def factor_set(alpha, dec: ExcursionDecomposition, upto: int | None = None) -> OrderedFactorSet:
    grid = dec.grid
    alpha = sample(alpha, grid)
    upto = grid.n_steps if upto is None else upto
    p, _ = projections(alpha.shape[-1])
    maps = step_maps(alpha, grid.dt)
    pairs = dec.completed(upto)
    factors = [p @ chain(maps, a, b) @ p for a, b in pairs]
    gaps = np.array([operator_norm(f - p) for f in factors])
    t = grid.times
    return OrderedFactorSet([(float(t[a]), float(t[b])) for a, b in pairs], factors, gaps)


def product_formula(alpha, dec: ExcursionDecomposition, t: float, min_length: float | None = None) -> ProductEvaluation:
    """Evaluate the ordered product at grid time ``t``.

    Excursions shorter than ``min_length`` (default ``dt``, which keeps every
    resolved one) are left out of the product; the returned tail bound
    covers the omission.
    """
    grid = dec.grid
    alpha = sample(alpha, grid)
    d = alpha.shape[-1]
    p, _ = projections(d)
    maps = step_maps(alpha, grid.dt)
    k = grid.index(t)
    min_length = grid.dt if min_length is None else min_length
    if dec.zero_measure > 0.05 * grid.t_end:
        import warnings

        warnings.warn(
            f"zero set covers {dec.zero_measure / grid.t_end:.1%} of [0, T]; "
            "the product representation assumes a null zero set",
            RuntimeWarning,
            stacklevel=2,
        )
    s0 = dec.sigma0_index
    if s0 is None or k < s0:
        return ProductEvaluation(chain(maps, 0, k), 0.0, 0.0, 0, 0)
    kept, dropped = _split_factors(dec, min_length, k)
    tau = int(dec.zero_idx[np.searchsorted(dec.zero_idx, k, side="right") - 1])
    inner = p.copy()
    for a, b in kept:
        inner = p @ chain(maps, a, b) @ p @ inner
    head = chain(maps, tau, k)
    tail = chain(maps, 0, s0)
    gaps = [operator_norm(p @ chain(maps, a, b) @ p - p) for a, b in dropped]
    total = sum(operator_norm(p @ chain(maps, a, b) @ p - p) for a, b in kept) + sum(gaps)
    inner_bound = product_tail_bound(gaps, total)
    bound = inner_bound * operator_norm(head) * operator_norm(tail)
    return ProductEvaluation(head @ inner @ tail, bound, inner_bound, len(kept), len(dropped))


def solve_product(alpha, dec: ExcursionDecomposition, min_length: float | None = None) -> DerivativeSolution:
    """The product representation at every grid time, built incrementally."""
    grid = dec.grid
    alpha = sample(alpha, grid)
    d = alpha.shape[-1]
    eye = np.eye(d)
    p, _ = projections(d)
    maps = step_maps(alpha, grid.dt)
    n = grid.n_steps
    min_length = grid.dt if min_length is None else min_length
    kept, _ = truncate(dec, min_length)
    keep_by_end = {int(b): True for a, b in kept.completed()}
    is_zero = np.zeros(n + 1, dtype=bool)
    is_zero[dec.zero_idx] = True

    gamma = np.empty((n + 1, d, d))
    left = np.empty((n + 1, d, d))
    bound = np.zeros(n + 1)
    s0 = dec.sigma0_index if dec.sigma0_index is not None else n + 1

    run = eye.copy()
    gamma[0] = left[0] = eye
    for k in range(min(s0, n)):
        run = maps[k] @ run
        gamma[k + 1] = left[k + 1] = run
    if s0 > n:
        res = residuals(alpha, dec, gamma, left)
        return DerivativeSolution(grid, gamma, left, "product", dec, res, 0, min_length, bound)

    tail = run  # E(0, sigma)
    tail_norm = operator_norm(tail)
    inner = p @ tail
    gamma[s0] = inner
    gap_total = 0.0
    gap_dropped = 0.0
    head = eye.copy()
    for k in range(s0, n):
        head = maps[k] @ head
        left[k + 1] = head @ inner
        if is_zero[k + 1]:
            factor = p @ head @ p
            gap = operator_norm(factor - p)
            gap_total += gap
            if keep_by_end.get(k + 1, False):
                inner = factor @ inner
            else:
                gap_dropped += gap
            head = eye.copy()
            gamma[k + 1] = inner
        else:
            gamma[k + 1] = head @ inner
        if gap_dropped > 0:
            bound[k + 1] = gap_dropped * math.exp(gap_total) * operator_norm(head) * tail_norm
    res = residuals(alpha, dec, gamma, left)
    return DerivativeSolution(grid, gamma, left, "product", dec, res, 0, min_length, bound)


# -- flows --------------------------------------------------------------------


def path_alpha(path: ReflectedPath, drift: DriftSpec) -> np.ndarray:
    """Drift Jacobian along the path, shape ``(n + 1, d, d)``."""
    return drift.jacobian(path.states)


def derivative_for_flow(
    path: ReflectedPath,
    drift: DriftSpec,
    method: str = "picard",
    tol: float = 1e-12,
    max_iter: int = 200,
    min_length: float | None = None,
) -> DerivativeSolution:
    alpha = path_alpha(path, drift)
    dec = decompose(path.beta, path.grid)
    if method == "picard":
        return solve_picard(alpha, dec, tol=tol, max_iter=max_iter)
    if method == "product":
        return solve_product(alpha, dec, min_length=min_length)
    raise ValueError(f"unknown method {method!r}")


def disagreement(a: DerivativeSolution, b: DerivativeSolution, upto: float | None = None) -> float:
    """Sup over grid times (up to ``upto``) of the operator-norm distance."""
    k = a.grid.n_steps if upto is None else a.grid.index(upto)
    return float(operator_norms(a.gamma[: k + 1] - b.gamma[: k + 1]).max())


def finite_difference(x, h: float, coordinate: int, drift: DriftSpec, noise: NoisePath, t: float) -> FDEstimate:
    """Central difference of ``phi_t`` in one coordinate of the start, shared noise."""
    if not h > 0:
        raise ValueError(f"h must be positive, got {h!r}")
    x = np.asarray(x, dtype=float)
    e = np.zeros_like(x)
    e[coordinate] = 1.0
    starts = np.stack([x + h * e, x - h * e])
    if np.any(starts[:, -1] < 0):
        raise ValueError("both perturbed starts must lie in the half-space")
    k = noise.grid.index(t)
    # one run per start takes the single-path fast route; rows are bit-identical to a batch
    states = np.stack([simulate_batch(s[None, :], drift, noise)[0][:, 0] for s in starts], axis=1)
    column = (states[k, 0] - states[k, 1]) / (2 * h)
    zeros = states[: k + 1, :, -1] == 0.0
    return FDEstimate(column, bool(np.any(zeros[:, 0] != zeros[:, 1])))
