import numpy as np
import pytest
from hypothesis import given, strategies as st

from reflectflow.grid import TimeGrid
from reflectflow.noise import sample_noise
from reflectflow.rsde import (
    DriftSpec,
    ReflectedPath,
    lipschitz_estimate,
    simulate_batch,
    skorokhod_map,
    solve_rsde,
    solve_rsde_shared,
)

A = np.array([[1.0, 1.0], [1.0, 1.0]])


@given(
    st.floats(0, 2),
    st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=200),
)
def test_skorokhod_map_properties(z0, steps):
    z = np.concatenate([[z0], z0 + np.cumsum(steps)])
    y, ell = skorokhod_map(z)
    assert np.all(y >= 0)
    assert np.all(np.diff(ell) >= 0)
    grows = np.flatnonzero(np.diff(ell) > 0) + 1
    assert np.all(y[grows] == 0.0)
    # brute-force minimal push
    ref = np.array([max(0.0, -z[: k + 1].min()) for k in range(len(z))])
    assert np.array_equal(ell, ref)


def test_skorokhod_map_rejects_negative_start():
    with pytest.raises(ValueError):
        skorokhod_map([-0.1, 0.0])


@pytest.mark.parametrize("seed", range(5))
def test_driftless_1d_is_w_minus_running_min(seed):
    g = TimeGrid.from_dt(1.0, 1e-4)
    noise = sample_noise(g, 1, seed)
    path = solve_rsde([0.0], DriftSpec.zero(1), noise)
    w = noise.values[:, 0]
    assert np.array_equal(path.beta, w - np.minimum.accumulate(w))
    assert np.array_equal(path.local_time, -np.minimum.accumulate(w) + 0.0)


@pytest.mark.parametrize("seed", range(3))
def test_complementarity_and_interior_coordinates(seed):
    g = TimeGrid.from_dt(1.0, 1e-3)
    noise = sample_noise(g, 2, seed)
    path = solve_rsde([0.3, 0.05], DriftSpec.linear(A), noise)
    assert np.all(path.beta >= 0)
    dl = np.diff(path.local_time)
    assert np.all(dl >= 0)
    assert np.all(path.beta[1:][dl > 0] == 0.0)
    assert path.local_time[0] == 0.0


def test_batch_rows_equal_single_runs():
    g = TimeGrid.from_dt(0.5, 1e-3)
    noise = sample_noise(g, 2, 4)
    starts = [[0.1, 0.0], [0.5, 0.2], [-1.0, 1.0]]
    shared = solve_rsde_shared(starts, DriftSpec.linear(A), noise)
    for x, p in zip(starts, shared):
        single = solve_rsde(x, DriftSpec.linear(A), noise)
        assert np.array_equal(single.states, p.states)


def test_zero_mode_matches_full_mode():
    g = TimeGrid.from_dt(1.0, 1e-3)
    noise = sample_noise(g, 2, 9)
    xs = np.array([[0.0, 0.01], [0.4, 0.1]])
    states, _ = simulate_batch(xs, DriftSpec.linear(A), noise)
    zeros, last = simulate_batch(xs, DriftSpec.linear(A), noise, record="zeros")
    assert np.array_equal(zeros, states[:, :, -1] == 0.0)
    assert np.array_equal(last, states[-1])


def test_custom_drift_matches_linear():
    g = TimeGrid.from_dt(1.0, 1e-3)
    noise = sample_noise(g, 2, 1)
    custom = DriftSpec.custom(2, lambda x: x @ A.T, lambda x: np.broadcast_to(A, x.shape + (2,)), 2.0)
    a = solve_rsde([0.2, 0.1], custom, noise)
    b = solve_rsde([0.2, 0.1], DriftSpec.linear(A), noise)
    assert np.allclose(a.states, b.states, atol=1e-12)
    assert custom.kind == "custom"


@pytest.mark.parametrize("start", [[0.1, -0.01], [np.nan, 0.1], [0.1]])
def test_bad_starts_rejected(start):
    noise = sample_noise(TimeGrid.from_dt(1.0, 0.1), 2, 0)
    with pytest.raises(ValueError):
        solve_rsde(start, DriftSpec.linear(A), noise)


def test_csv_round_trip_is_exact(tmp_path):
    g = TimeGrid.from_dt(1.0, 1e-3)
    path = solve_rsde([0.2, 0.05], DriftSpec.linear(A), sample_noise(g, 2, 3))
    f = path.to_csv(tmp_path / "p.csv")
    back = ReflectedPath.from_csv(f)
    assert np.array_equal(back.states, path.states)
    assert np.array_equal(back.local_time, path.local_time)
    assert f.read_text().splitlines()[0] == "time,x_1,x_2,L"


def test_lipschitz_estimate_bounded_by_gronwall():
    g = TimeGrid.from_dt(1.0, 1e-3)
    noise = sample_noise(g, 2, 0)
    paths = solve_rsde_shared([[0.0, 0.1], [0.05, 0.12], [0.1, 0.3]], DriftSpec.linear(A), noise)
    lip = lipschitz_estimate(paths)
    assert 0 < lip <= 2 * np.exp(2.0)


@given(
    st.integers(1, 4),
    st.integers(0, 1000),
    st.lists(st.floats(-1, 1), min_size=4, max_size=4),
    st.floats(-2, 2),
)
def test_single_start_path_is_bitwise_batch_row(d, seed, start, scale):
    g = TimeGrid.from_dt(0.2, 1e-3)
    noise = sample_noise(g, d, seed)
    a = DriftSpec.linear(scale * np.random.default_rng(seed).normal(size=(d, d)))
    x = np.array(start[:d])
    x[-1] = abs(x[-1]) if seed % 3 else 0.0
    one, l_one = simulate_batch([x], a, noise)
    many, l_many = simulate_batch([x, x + 1.0], a, noise)
    assert one[:, 0].tobytes() == many[:, 0].tobytes()
    assert l_one[:, 0].tobytes() == l_many[:, 0].tobytes()
    zeros, last = simulate_batch([x], a, noise, record="zeros")
    assert np.array_equal(zeros[:, 0], one[:, 0, -1] == 0.0)
    assert np.array_equal(last[0], one[-1, 0])
