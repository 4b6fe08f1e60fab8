"""Command-line entry point: simulate, derivative, scan and verify.

Each command reads an INI config (``--config``), applies flag overrides and
writes its files under ``--out``.  Work is fanned out per seed; results come
back in seed order and are written by the parent process only, so outputs do
not depend on the worker count.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import example2d
from .config import ConfigError, ExperimentConfig
from .derivative import ConvergenceError, derivative_for_flow, disagreement, product_formula
from .excursions import decompose
from .grid import TimeGrid
from .noise import sample_noise
from .rsde import DriftSpec, format_float, solve_rsde_shared
from .runner import parallel_map

log = logging.getLogger("reflectflow")


def _jsonable(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    return value


def write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=1)
        fh.write("\n")


def prepare_out(out) -> Path:
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"cannot write to output directory {path}: {exc.strerror or exc}") from None
    return path


def _drift(cfg: ExperimentConfig) -> DriftSpec:
    return DriftSpec.linear(cfg.drift_matrix())


def _grid(cfg: ExperimentConfig) -> TimeGrid:
    return TimeGrid.from_dt(cfg.T, cfg.dt)


# -- simulate -----------------------------------------------------------------


def _simulate_task(args):
    cfg, seed = args
    noise = sample_noise(_grid(cfg), cfg.d, seed)
    return solve_rsde_shared(cfg.starts, _drift(cfg), noise)


def path_summary(path) -> dict:
    dec = decompose(path.beta, path.grid)
    return {
        "start": path.start.tolist(),
        "sigma": dec.sigma0,
        "n_excursions": int(len(dec.interval_idx)),
        "local_time_T": float(path.local_time[-1]),
    }


def cmd_simulate(cfg: ExperimentConfig) -> int:
    out = prepare_out(cfg.out)
    results = parallel_map(_simulate_task, [(cfg, s) for s in cfg.seeds], cfg.workers)
    summary = []
    for seed, paths in zip(cfg.seeds, results):
        for i, path in enumerate(paths):
            name = f"path_s{seed}_x{i}.csv"
            path.to_csv(out / name)
            row = {"seed": seed, "start_index": i, "file": name, **path_summary(path)}
            summary.append(row)
            print(
                f"seed {seed} x{i}: sigma={row['sigma']:.6g} "
                f"excursions={row['n_excursions']} L(T)={row['local_time_T']:.6g}"
            )
    write_json(out / "simulate_summary.json", summary)
    return 0


# -- derivative ---------------------------------------------------------------


def _derivative_task(args):
    cfg, seed = args
    drift = _drift(cfg)
    noise = sample_noise(_grid(cfg), cfg.d, seed)
    methods = ["picard", "product"] if cfg.method == "both" else [cfg.method]
    records = []
    for i, path in enumerate(solve_rsde_shared(cfg.starts, drift, noise)):
        rec = {"seed": seed, "start_index": i, "start": path.start.tolist(), "solutions": {}, "errors": {}}
        for m in methods:
            try:
                rec["solutions"][m] = derivative_for_flow(
                    path, drift, m, tol=cfg.tol, max_iter=cfg.max_iter, min_length=cfg.min_length
                )
            except ConvergenceError as exc:
                rec["errors"][m] = {"error": str(exc), "residual": exc.residual, "iterations": exc.iterations}
        rec["sweep"] = _tail_sweep(path, drift, cfg.min_lengths) if cfg.min_lengths else None
        records.append(rec)
    return records


def _tail_sweep(path, drift, min_lengths) -> list[tuple[float, float, float, int]]:
    """Tail bound and measured truncation error at ``T`` for each ``min_length``."""
    dec = decompose(path.beta, path.grid)
    alpha = drift.jacobian(path.states)
    t = path.grid.t_end
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        full = product_formula(alpha, dec, t, min_length=0.0).matrix
        rows = []
        for m in sorted(min_lengths):
            ev = product_formula(alpha, dec, t, min_length=m)
            rows.append((m, ev.tail_bound, float(np.linalg.norm(ev.matrix - full, 2)), ev.n_dropped))
    return rows


def cmd_derivative(cfg: ExperimentConfig) -> int:
    out = prepare_out(cfg.out)
    results = parallel_map(_derivative_task, [(cfg, s) for s in cfg.seeds], cfg.workers)
    failed = False
    summary = []
    for records in results:
        for rec in records:
            stem = f"derivative_s{rec['seed']}_x{rec['start_index']}"
            meta = {k: rec[k] for k in ("seed", "start_index", "start")}
            meta["methods"] = {}
            for m, sol in rec["solutions"].items():
                sol.to_csv(out / f"{stem}_{m}.csv")
                meta["methods"][m] = sol.metadata()
            for m, err in rec["errors"].items():
                meta["methods"][m] = {"method": m, "converged": False, **err}
                failed = True
            sols = rec["solutions"]
            if "picard" in sols and "product" in sols:
                meta["disagreement"] = disagreement(sols["picard"], sols["product"])
            if "product" in sols:
                meta["tail_bound"] = float(sols["product"].tail_bound[-1])
            if rec["sweep"] is not None:
                with open(out / f"{stem}_tail_sweep.csv", "w", newline="") as fh:
                    fh.write("min_length,tail_bound,truncation_error,n_dropped\n")
                    for m, b, e, nd in rec["sweep"]:
                        fh.write(f"{format_float(m)},{format_float(b)},{format_float(e)},{nd}\n")
            write_json(out / f"{stem}.json", meta)
            summary.append(meta)
            line = f"seed {rec['seed']} x{rec['start_index']}:"
            if "disagreement" in meta:
                line += f" disagreement={meta['disagreement']:.3g}"
            if "tail_bound" in meta:
                line += f" tail_bound={meta['tail_bound']:.3g}"
            for m, err in rec["errors"].items():
                line += f" {m} FAILED (residual {err['residual']:.3g})"
            print(line)
    write_json(out / "derivative_summary.json", summary)
    return 1 if failed else 0


# -- scan ---------------------------------------------------------------------


def _scan_task(args):
    cfg, seed = args
    return example2d.scan_discontinuity(
        (cfg.x1_min, cfg.x1_max), cfg.n_points, cfg.x2, cfg.scan_time, seed, dt=cfg.dt
    )


def cmd_scan(cfg: ExperimentConfig) -> int:
    """Scan ``f_t(., x2)`` for the planar example; the drift in the config is not used."""
    out = prepare_out(cfg.out)
    reports = parallel_map(_scan_task, [(cfg, s) for s in cfg.seeds], cfg.workers)
    for rep in reports:
        rep.to_csv(out / f"scan_s{rep.seed}.csv")
        rep.to_json(out / f"scan_s{rep.seed}.json")
        flag = " (vacuous: no start hits the boundary)" if rep.vacuous else ""
        print(
            f"seed {rep.seed}: hit fraction {rep.hit_fraction:.3f}, "
            f"{len(rep.hit_jumps)} jumps at hit points{flag}"
        )
    summary = example2d.summarize_scans(reports, cfg.n_blocks)
    summary["nesting_violations"] = sum(r.nesting_violations for r in reports)
    summary["bound_violations"] = sum(r.bound_violations for r in reports)
    write_json(out / "scan_summary.json", summary)
    bad = summary["monotonicity_violations"] + summary["nesting_violations"] + summary["bound_violations"]
    if bad:
        print(f"{bad} order/nesting/bound violations", file=sys.stderr)
    return 1 if bad else 0


# -- verify -------------------------------------------------------------------


def cmd_verify(level: str, workers: int, out: str | None = None) -> int:
    from .checks import run_checks

    results = run_checks(level, workers=workers)
    for r in results:
        print(r.line())
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed ({level})")
    if out is not None:
        write_json(prepare_out(out) / f"verify_{level}.json", [r.to_dict() for r in results])
    return 1 if n_fail else 0


# -- argument handling --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file")
    common.add_argument("--seed", type=int, help="run this single seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dt", type=float)
    common.add_argument("--T", type=float)
    common.add_argument("--method", choices=("picard", "product", "both"))
    common.add_argument("--workers", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="reflectflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="reflected paths to CSV")
    sub.add_parser("derivative", parents=[common], help="derivative in the start point, both methods")
    sub.add_parser("scan", parents=[common], help="discontinuity scan of the planar example")
    verify = sub.add_parser("verify", parents=[common], help="run the acceptance checks")
    verify.add_argument("--level", choices=("quick", "full"), default="quick")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    for key in ("out", "dt", "T", "method", "workers"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    return replace(cfg, **overrides).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "verify":
            return cmd_verify(args.level, cfg.workers, args.out)
        return {"simulate": cmd_simulate, "derivative": cmd_derivative, "scan": cmd_scan}[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
