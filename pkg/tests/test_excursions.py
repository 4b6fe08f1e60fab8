import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reflectflow.excursions import decompose, from_zeros, last_zero, truncate
from reflectflow.grid import TimeGrid

G = TimeGrid.from_dt(1.0, 0.1)


def brute_intervals(beta, grid):
    z = [k for k, b in enumerate(beta) if b == 0.0]
    t = grid.times
    out = [(t[a], t[b]) for a, b in zip(z, z[1:])]
    if z and z[-1] < grid.n_steps:
        out.append((t[z[-1]], math.inf))
    return out


@given(st.lists(st.sampled_from([0.0, 0.5, 1.0]), min_size=11, max_size=11))
def test_decompose_matches_brute_force(beta):
    dec = decompose(beta, G)
    assert dec.intervals == brute_intervals(beta, G)
    assert dec.zero_measure == pytest.approx(beta.count(0.0) * G.dt)


def test_no_zero_path():
    dec = decompose(np.ones(11), G)
    assert dec.sigma0 == math.inf and dec.intervals == []
    assert json.loads(dec.to_json())["sigma0"] is None


def test_open_excursion_serialises_as_null(tmp_path):
    beta = np.array([1, 0, 1, 1, 0, 0, 1, 1, 1, 1, 1], dtype=float)
    dec = decompose(beta, G)
    assert dec.sigma0 == pytest.approx(0.1)
    assert dec.intervals[-1][1] == math.inf
    dec.to_json(tmp_path / "d.json")
    data = json.loads((tmp_path / "d.json").read_text())
    assert data["intervals"][-1][1] is None
    assert len(data["intervals"]) == 3


@pytest.mark.parametrize("beta", [np.full(11, -0.1), np.full(11, np.nan), np.ones(5)])
def test_decompose_rejects(beta):
    with pytest.raises(ValueError):
        decompose(beta, G)


def test_last_zero():
    dec = from_zeros([2, 5], G)
    assert last_zero(dec, 0.45) == pytest.approx(0.2)
    assert last_zero(dec, 0.5) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        last_zero(dec, 0.1)


def test_last_zero_indices():
    dec = from_zeros([2, 5], G)
    assert dec.last_zero_indices().tolist() == [-1, -1, 2, 2, 2, 5, 5, 5, 5, 5, 5]


def test_truncate_keeps_open_and_long_intervals():
    dec = from_zeros([1, 2, 6, 7], G)
    kept, dropped = truncate(dec, 0.2)
    assert kept.intervals == [(pytest.approx(0.2), pytest.approx(0.6)), (pytest.approx(0.7), math.inf)]
    assert dropped == pytest.approx(0.2)
    assert np.array_equal(kept.zero_idx, dec.zero_idx)
    same, zero = truncate(dec, 0.1)
    assert len(same.interval_idx) == 4 and zero == 0.0
    with pytest.raises(ValueError):
        truncate(dec, -1.0)
