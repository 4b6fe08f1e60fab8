"""Truncation of the ordered product: tail bound against the measured error.

    python3 scripts/tail_sweep.py --seed 3
"""

from __future__ import annotations

import argparse
import warnings

import numpy as np

from reflectflow import example2d
from reflectflow.derivative import product_formula
from reflectflow.excursions import decompose
from reflectflow.grid import TimeGrid
from reflectflow.noise import sample_noise
from reflectflow.rsde import solve_rsde


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--start", type=float, nargs=2, default=[0.2, 0.05])
    ap.add_argument("--dt", type=float, default=1e-4)
    args = ap.parse_args()

    grid = TimeGrid.from_dt(1.0, args.dt)
    path = solve_rsde(args.start, example2d.DRIFT, sample_noise(grid, 2, args.seed))
    dec = decompose(path.beta, grid)
    alpha = example2d.DRIFT.jacobian(path.states)
    print(f"sigma = {dec.sigma0:.4f}, {len(dec.interval_idx)} excursions")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        full = product_formula(alpha, dec, 1.0, min_length=0.0).matrix
        print(" min_length  kept  dropped    error       bound")
        for m in np.geomspace(args.dt, 0.5, 12):
            ev = product_formula(alpha, dec, 1.0, min_length=float(m))
            err = np.linalg.norm(ev.matrix - full, 2)
            print(f"{m:10.2e} {ev.n_factors:5d} {ev.n_dropped:8d} {err:10.3e} {ev.tail_bound:11.3e}")


if __name__ == "__main__":
    main()
