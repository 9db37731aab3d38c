"""Command-line front end: ``taps <mode> --config <path> [--out DIR] [--seed N] [--threads K]``.

Exit codes: 0 success, 2 a solve or study did not converge, 1 any error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, RunConfig, build_problem, exact_from_config, load_config, problem_to_dict
from .factors_io import save_factors
from .mms import StudyPlan, run_study
from .oracle import full_l2_distance, full_l2_norm, oracle_full_solve
from .problem import validate
from .solver import Discretization, LinearSolveError, solve

__all__ = ["main", "run"]

log = logging.getLogger("taps")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2
COMPARE_COLUMNS = ("preset", "p", "M", "n", "dof_equiv", "rel_l2_distance", "taps_seconds",
                   "oracle_seconds", "converged")


def _write_log(out: Path, cfg: RunConfig, spec, extra: dict) -> None:
    resolved = cfg.model_dump()
    resolved["problem_resolved"] = problem_to_dict(spec)
    resolved["solver_resolved"] = dict(spec.solver_params.__dict__)
    payload = {"version": __version__, "hardware": platform.platform(), "config": resolved, **extra}
    (out / "report.json").write_text(json.dumps(payload, indent=2, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    return str(o)


def _run_solve(cfg, spec, label, out: Path) -> int:
    disc = Discretization(spec)
    state, report = solve(spec, disc=disc)
    dims = {d.name: d for d in spec.dimensions}
    files = []
    for name, f in state.items():
        files.append(str(save_factors(out / f"factors-{name}.taps", f, dims, binary=cfg.binary).name))
    _write_log(out, cfg, spec, {"mode": "solve", "preset": label, "report": report.to_dict(), "outputs": files})
    print(f"solve {label}: converged={report.converged} sweeps={report.sweeps} "
          f"wall={report.wall_seconds:.3f}s -> {out}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _run_study(cfg, spec, label, out: Path) -> int:
    exact = exact_from_config(cfg, spec, label)
    st = cfg.study
    plan = StudyPlan(spec, exact, st.levels, [(h.p, h.s, h.a) for h in st.hyperparameters],
                     M=st.M, dims=st.dims, label=label)
    result = run_study(plan)
    result.write_csv(out / "study.csv")
    rates = {f"p={k[0]},s={k[1]},a={k[2]}": v for k, v in result.rates.items()}
    _write_log(out, cfg, spec, {"mode": "study", "preset": label, "rates": rates,
                                "exact_flags": {f"p={k[0]},s={k[1]},a={k[2]}": v for k, v in result.exact.items()},
                                "hardware_timings": result.hardware, "outputs": ["study.csv"]})
    for key, rate in rates.items():
        print(f"study {label} {key}: rate={'exact' if rate is None else f'{rate:.3f}'}")
    return EXIT_OK if result.all_converged else EXIT_NOT_CONVERGED


def _run_compare(cfg, spec, label, out: Path) -> int:
    t0 = time.perf_counter()
    disc = Discretization(spec)
    state, report = solve(spec, disc=disc)
    t_taps = time.perf_counter() - t0
    t0 = time.perf_counter()
    ref = oracle_full_solve(spec)
    t_oracle = time.perf_counter() - t0
    num = den = 0.0
    for f in spec.fields:
        tabs = [disc.tables[d] for d in f.dims]
        num += full_l2_distance(state[f.name].to_full(), tabs, ref[f.name], tabs, tabs) ** 2
        den += full_l2_norm(ref[f.name], tabs) ** 2
    dist = float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))
    dof = int(np.prod([d.n_nodes for d in spec.dimensions])) * len(spec.fields)
    n = spec.dimensions[0].n_elements
    p = spec.dimensions[0].basis.p
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        w.writerow([label, p, spec.solver_params.M, n, dof, repr(dist), f"{t_taps:.6f}", f"{t_oracle:.6f}",
                    str(report.converged).lower()])
    _write_log(out, cfg, spec, {"mode": "oracle-compare", "preset": label, "report": report.to_dict(),
                                "rel_l2_distance": dist, "outputs": ["compare.csv"]})
    print(f"oracle-compare {label}: relative L2 distance {dist:.3e}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def _run_validate(cfg, spec, label) -> int:
    diags = validate(spec)
    for d in diags:
        print(str(d), file=sys.stderr)
    if not diags:
        print(f"validate {label}: ok")
    return EXIT_ERROR if diags else EXIT_OK


def run(cfg: RunConfig) -> int:
    spec, label = build_problem(cfg)
    if cfg.mode == "validate":
        return _run_validate(cfg, spec, label)
    diags = validate(spec)
    if diags:
        for d in diags:
            print(str(d), file=sys.stderr)
        return EXIT_ERROR
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    if cfg.mode == "solve":
        return _run_solve(cfg, spec, label, out)
    if cfg.mode == "study":
        return _run_study(cfg, spec, label, out)
    return _run_compare(cfg, spec, label, out)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="taps", description="Separated space-parameter-time Galerkin solver")
    ap.add_argument("mode", choices=["solve", "study", "oracle-compare", "validate"])
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="factor initialization seed (overrides the config)")
    ap.add_argument("--threads", type=int, help="thread cap for linear algebra (default: $TAPS_THREADS)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if cfg.mode != args.mode:
            cfg = cfg.model_copy(update={"mode": args.mode})
            if args.mode == "study" and cfg.study is None:
                raise ConfigError("mode 'study' needs a 'study' block with >= 2 levels")
        updates = {}
        if args.out is not None:
            updates["out"] = args.out
        if args.seed is not None:
            updates["seed"] = args.seed
        threads = args.threads if args.threads is not None else cfg.threads
        if threads is None and os.environ.get("TAPS_THREADS"):
            threads = int(os.environ["TAPS_THREADS"])
        if threads is not None:
            if threads < 1:
                raise ConfigError("thread count must be >= 1")
            updates["threads"] = threads
        cfg = cfg.model_copy(update=updates)
        with threadpool_limits(limits=cfg.threads):
            return run(cfg)
    except (ConfigError, LinearSolveError, OSError, ValueError) as exc:
        print(f"taps: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
