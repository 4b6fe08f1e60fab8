"""Small worked cases with values computed by hand or by an independent route."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from reflectflow import example2d
from reflectflow.derivative import (
    derivative_for_flow,
    finite_difference,
    pi_map,
    product_formula,
    product_tail_bound,
    solve_picard,
    solve_product,
)
from reflectflow.excursions import ExcursionDecomposition, decompose, from_zeros, last_zero, truncate
from reflectflow.grid import TimeGrid
from reflectflow.linalg import mat_exp, operator_norm, projections, solve_propagator
from reflectflow.noise import sample_noise
from reflectflow.rsde import DriftSpec, simulate_batch, skorokhod_map, solve_rsde, solve_rsde_shared

A = example2d.A


def c(length):
    return (math.exp(2 * length) + 1) / 2


# matrix kernels ---------------------------------------------------------------


def test_mat_exp_against_fine_rk4():
    a = np.random.default_rng(49).normal(size=(3, 3))
    h, y = 1e-5, np.eye(3)
    for _ in range(70_000):
        k1 = a @ y
        k2 = a @ (y + h / 2 * k1)
        k3 = a @ (y + h / 2 * k2)
        k4 = a @ (y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    assert np.allclose(mat_exp(a, 0.7), y, atol=1e-8)


def test_propagator_of_zero_and_diagonal_generators():
    g = TimeGrid.from_dt(1.0, 1e-3)
    assert np.array_equal(solve_propagator(np.zeros((2, 2)), g, 0.2, 0.9).matrix, np.eye(2))
    assert np.array_equal(solve_propagator(np.ones((2, 2)), g, 0.4, 0.4).matrix, np.eye(2))
    p = solve_propagator(lambda t: np.diag([t, -t]), g, 0.0, 1.0)
    assert np.allclose(p.matrix, np.diag([math.exp(0.5), math.exp(-0.5)]), atol=1e-12)


def test_norm_examples():
    assert operator_norm(np.eye(2)) == pytest.approx(1.0)
    assert operator_norm(np.diag([3.0, -5.0])) == pytest.approx(5.0)


@given(arrays(float, (4, 4), elements=st.floats(-5, 5)), arrays(float, (4, 4), elements=st.floats(-5, 5)))
def test_norm_is_submultiplicative(a, b):
    assert operator_norm(a @ b) <= operator_norm(a) * operator_norm(b) * (1 + 1e-12) + 1e-300


def test_projection_algebra():
    p, q = projections(4)
    assert np.array_equal(p @ p, p) and np.array_equal(q @ q, q)
    assert not np.any(p @ q) and not np.any(q @ p)


# noise and paths --------------------------------------------------------------


def test_increment_variance_large_sample():
    g = TimeGrid.from_dt(100.0, 1e-3)
    inc = sample_noise(g, 1, 11).increments
    assert inc.size == 100_000
    assert abs(inc.var() / 1e-3 - 1) < 0.05


def test_skorokhod_map_without_contact():
    z = np.array([0.5, 0.7, 0.2, 1.0])
    y, ell = skorokhod_map(z)
    assert np.array_equal(y, z) and not np.any(ell)


def test_skorokhod_map_linear_decrease():
    dt, x = 0.01, 0.3
    z = x - np.arange(101) * dt
    y, ell = skorokhod_map(z)
    k = np.arange(101)
    assert np.allclose(y, np.maximum(x - k * dt, 0), atol=1e-15)
    assert np.allclose(ell, np.maximum(k * dt - x, 0), atol=1e-15)


def test_driftless_path_is_skorokhod_map_of_brownian_values():
    g = TimeGrid.from_dt(1.0, 1e-4)
    noise = sample_noise(g, 1, 5)
    path = solve_rsde([0.0], DriftSpec.zero(1), noise)
    y, ell = skorokhod_map(noise.values[:, 0])
    assert np.array_equal(path.beta, y)
    assert np.array_equal(path.local_time, ell)


def test_far_from_boundary_is_free_motion():
    g = TimeGrid.from_dt(1.0, 1e-3)
    noise = sample_noise(g, 2, 0)
    path = solve_rsde([0.3, 50.0], DriftSpec.zero(2), noise)
    assert not np.any(path.local_time)
    assert np.allclose(path.states, [0.3, 50.0] + noise.values, atol=1e-12)


def test_plane_paths_repeat_bitwise_and_duplicate_starts_agree():
    g = TimeGrid.from_dt(1.0, 1e-3)
    drift = DriftSpec.linear(A)
    a = solve_rsde([0.2, 0.05], drift, sample_noise(g, 2, 8))
    b = solve_rsde([0.2, 0.05], drift, sample_noise(g, 2, 8))
    assert a.states.tobytes() == b.states.tobytes()
    p, q = solve_rsde_shared([[0.2, 0.05], [0.2, 0.05]], drift, sample_noise(g, 2, 8))
    assert np.array_equal(p.states, q.states)


@pytest.mark.parametrize("seed", range(5))
def test_larger_start_has_fewer_zeros_1d(seed):
    g = TimeGrid.from_dt(1.0, 1e-3)
    states, _ = simulate_batch([[0.1], [0.2]], DriftSpec.zero(1), sample_noise(g, 1, seed))
    z1, z2 = states[:, 0, 0] == 0, states[:, 1, 0] == 0
    assert not np.any(z2 & ~z1)
    if z1[:-1].any():
        assert np.any(z1 & ~z2)


@pytest.mark.parametrize("seed", range(5))
def test_plane_flow_is_monotone(seed):
    g = TimeGrid.from_dt(1.0, 1e-3)
    rng = np.random.default_rng(seed)
    lo = rng.uniform(0, 0.5, (5, 2))
    hi = lo + rng.uniform(0, 0.3, (5, 2))
    states, _ = simulate_batch(np.vstack([lo, hi]), DriftSpec.linear(A), sample_noise(g, 2, seed))
    assert np.all(states[:, 5:] >= states[:, :5])


# excursions -------------------------------------------------------------------


def simulated_decomposition(seed, dt=1e-3):
    g = TimeGrid.from_dt(1.0, dt)
    path = solve_rsde([0.0], DriftSpec.zero(1), sample_noise(g, 1, seed))
    return path.beta, decompose(path.beta, g)


@pytest.mark.parametrize("seed", range(4))
def test_decomposition_invariants(seed):
    beta, dec = simulated_decomposition(seed)
    pairs = dec.interval_idx
    closed = pairs[pairs[:, 1] >= 0]
    assert np.all(closed[:, 0] < closed[:, 1])
    assert np.all(pairs[1:, 0] >= np.where(pairs[:-1, 1] < 0, np.inf, pairs[:-1, 1]))
    assert np.all(beta[pairs[:, 0]] == 0) and np.all(beta[closed[:, 1]] == 0)
    for a, b in closed:
        assert np.all(beta[a + 1 : b] > 0)
    positive = np.zeros(len(beta), dtype=bool)
    positive[: dec.sigma0_index] = True
    for a, b in pairs:
        positive[a + 1 : (b if b >= 0 else len(beta))] = True
    assert np.array_equal(positive, beta > 0)
    tau = dec.last_zero_indices()
    k = np.arange(len(beta))
    assert np.all(np.diff(tau) >= 0) and np.all(tau <= k)
    assert np.all(beta[tau[tau >= 0]] == 0)


def test_sine_zeros_on_a_grid():
    g = TimeGrid.from_dt(3.0, 1e-3)
    dec = decompose(np.abs(np.sin(np.pi * g.times)), g, atol=1e-12)
    assert dec.sigma0 == 0.0
    assert dec.intervals == [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]


def test_zero_measure_shrinks_under_refinement():
    fine = TimeGrid.from_dt(1.0, 1e-5)
    noise = sample_noise(fine, 1, 3)
    measures = []
    for factor in (100, 10, 1):
        g = TimeGrid(1.0, fine.n_steps // factor)
        w = noise.values[::factor, 0]
        y, _ = skorokhod_map(w)
        measures.append(decompose(y, g).zero_measure)
    assert measures[0] > measures[1] > measures[2]


@pytest.mark.parametrize("seed", range(4))
def test_last_zero_matches_linear_scan(seed):
    beta, dec = simulated_decomposition(seed)
    t = dec.grid.times
    ref = max(t[j] for j in range(len(beta)) if beta[j] == 0)
    assert last_zero(dec, 1.0) == ref
    for a, b in dec.completed()[:5]:
        mid = (a + b) // 2
        assert last_zero(dec, t[mid]) == t[a]
        assert last_zero(dec, t[a]) == t[a]


def test_truncation_examples():
    beta, dec = simulated_decomposition(2)
    same, mass = truncate(dec, 0.0)
    assert same is dec and mass == 0.0
    everything, mass = truncate(dec, 2.0)
    closed = dec.completed()
    assert len(everything.completed()) == 0
    assert mass == pytest.approx(float(np.sum(np.diff(dec.grid.times[closed], axis=1))))
    kept, mass = truncate(dec, 10 * dec.grid.dt)
    lengths = [b - a for a, b in closed]
    assert mass == pytest.approx(sum(l for l in lengths if l < 10) * dec.grid.dt)


# pi map and derivative systems --------------------------------------------------


def test_pi_map_examples():
    g = TimeGrid.from_dt(3.0, 0.5)
    eye = np.eye(2)
    p, q = projections(2)
    x = g.times[:, None, None] * eye
    assert np.array_equal(pi_map(x, from_zeros([], g)), x)
    ones = np.broadcast_to(eye, (7, 2, 2))
    y = pi_map(ones, from_zeros([3], g))
    assert np.array_equal(y[:3], ones[:3]) and np.all(y[3:] == p)
    z = pi_map(x, from_zeros([2, 4], g))
    assert np.allclose(z[5], 2.5 * p + 0.5 * q)


@pytest.mark.parametrize("solver", [solve_picard, solve_product])
def test_zero_generator_gives_identity_then_projection(solver):
    g = TimeGrid.from_dt(1.0, 0.01)
    p, _ = projections(3)
    sol = solver(np.zeros((3, 3)), from_zeros([40, 70], g))
    assert np.allclose(sol.gamma[:40], np.eye(3))
    assert np.allclose(sol.gamma[40:], p)


def test_product_examples_with_hand_values():
    g = TimeGrid.from_dt(1.0, 1e-3)
    e = lambda s, t: mat_exp(A, t - s)
    p, _ = projections(2)
    one = from_zeros([500], g)
    assert np.allclose(product_formula(A, one, 1.0).matrix, e(0.5, 1.0) @ p @ e(0, 0.5), atol=1e-11)
    two = from_zeros([300, 600, 850], g)
    ref = e(0.85, 1.0) @ p @ e(0.6, 0.85) @ p @ e(0.3, 0.6) @ p @ e(0, 0.3)
    assert np.allclose(product_formula(A, two, 1.0).matrix, ref, atol=1e-11)


def test_stretch_on_the_boundary_then_one_excursion():
    # the path sits on the boundary over [0.5, 0.7], then makes one excursion (0.7, 0.9)
    g = TimeGrid.from_dt(1.0, 1e-3)
    dec = ExcursionDecomposition(g, np.array([500, 700, 900]), np.array([[700, 900], [900, -1]]))
    want = c(0.1) * c(0.2) * c(0.5)
    assert want == pytest.approx((math.exp(0.2) + 1) / 2 * (math.exp(0.4) + 1) / 2 * (math.e + 1) / 2)
    assert product_formula(A, dec, 1.0).matrix[0, 0] == pytest.approx(want, rel=1e-12)
    assert example2d.f_closed_form(dec, 1.0) == pytest.approx(want, rel=1e-14)


def test_closed_form_examples():
    g = TimeGrid.from_dt(1.0, 1e-3)
    assert example2d.f_closed_form(from_zeros([], g), 1.0) == pytest.approx(4.194528049465325)
    assert example2d.f_closed_form(from_zeros([500], g), 1.0) == pytest.approx(c(0.5) ** 2)


def test_geometric_tail_bound():
    norms = 2.0 ** -np.arange(0, 80)
    for m in (0, 3, 10):
        assert product_tail_bound(norms[m + 1 :], norms.sum()) == pytest.approx(2.0**-m * math.e**2)
    assert product_tail_bound([], 1.0) == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_driftless_1d_derivative_is_indicator(seed):
    g = TimeGrid.from_dt(1.0, 1e-3)
    path = solve_rsde([0.05], DriftSpec.zero(1), sample_noise(g, 1, seed))
    for method in ("picard", "product"):
        sol = derivative_for_flow(path, DriftSpec.zero(1), method)
        s = sol.decomposition.sigma0_index or g.n_steps + 1
        assert np.all(sol.gamma[:s] == 1.0) and np.all(sol.gamma[s:] == 0.0)


def test_p_part_continuous_q_part_jumps_only_at_zeros():
    g = TimeGrid.from_dt(1.0, 1e-4)
    path = solve_rsde([0.2, 0.05], DriftSpec.linear(A), sample_noise(g, 2, 1))
    sol = derivative_for_flow(path, DriftSpec.linear(A), "product")
    p, q = projections(2)
    steps = np.abs(np.diff(p @ sol.gamma, axis=0)).max(axis=(1, 2))
    assert steps.max() < 50 * g.dt
    q_steps = np.abs(np.diff(q @ sol.gamma, axis=0)).max(axis=(1, 2))
    zeros = set(sol.decomposition.zero_idx.tolist())
    big = np.flatnonzero(q_steps > 50 * g.dt) + 1
    assert set(big.tolist()) <= zeros


@pytest.mark.parametrize("h", [1e-2, 1e-3, 1e-4])
def test_finite_difference_against_derivative(h):
    g = TimeGrid.from_dt(1.0, 1e-4)
    drift = DriftSpec.linear(A)
    checked = 0
    for seed in range(6):
        noise = sample_noise(g, 2, seed)
        x = [0.3, 0.08]
        fd = finite_difference(x, h, 0, drift, noise, 1.0)
        if fd.near_critical:
            continue
        sol = derivative_for_flow(solve_rsde(x, drift, noise), drift, "product")
        assert abs(fd.column[0] - sol.at(1.0)[0, 0]) <= max(1e-2, 10 * h)
        checked += 1
    assert checked > 0


# planar example -----------------------------------------------------------------


def test_lemma4_examples():
    lhs, rhs, _ = example2d.lemma4_check([2.0, 2.0])
    assert lhs == pytest.approx(c(1.0) ** 2)
    # ((e + 1) / 2)^2 = 1.8591409...^2
    lhs, rhs, _ = example2d.lemma4_check([1.0, 1.0])
    assert lhs == pytest.approx(3.456405, abs=1e-6) and rhs == pytest.approx(4.194528, abs=1e-6)
    lhs, rhs, margin = example2d.lemma4_check(2.0 ** -np.arange(1, 21))
    assert margin > 0 and rhs < (math.e + 1) / 2


def test_short_horizon_scan_is_flat():
    rep = example2d.scan_discontinuity((0.0, 1.0), 32, 0.5, 0.01, 0, dt=1e-4)
    assert rep.vacuous and not rep.jumps
    assert np.allclose(rep.f_values, c(0.01), rtol=1e-14)
    out = example2d.nondifferentiability_experiment((0.0, 1.0, 0.5), 0.01, 2, n_points=16, dt=1e-4)
    assert out["vacuous"] is True and out["fraction_with_jump"] is None


def test_scan_report_is_reproducible(tmp_path):
    a = example2d.scan_discontinuity((0.0, 1.0), 64, 0.1, 1.0, 4, dt=1e-3)
    b = example2d.scan_discontinuity((0.0, 1.0), 64, 0.1, 1.0, 4, dt=1e-3)
    a.to_json(tmp_path / "a.json")
    b.to_json(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert a.f_values.tobytes() == b.f_values.tobytes()


@pytest.mark.parametrize("seed", [0, 1])
def test_jump_locations_nest_under_refinement(seed):
    coarse = example2d.scan_discontinuity((0.0, 1.0), 129, 0.1, 1.0, seed, dt=1e-4)
    fine = example2d.scan_discontinuity((0.0, 1.0), 1025, 0.1, 1.0, seed, dt=1e-4)
    assert np.array_equal(fine.x1_grid[::8], coarse.x1_grid)
    fine_at = {j.index // 8 for j in fine.jumps}
    missing = [j.index for j in coarse.jumps if j.index not in fine_at]
    assert not missing
