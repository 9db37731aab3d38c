"""Manufactured-solution convergence studies and rate fitting."""
from __future__ import annotations

import csv
import math
import platform
import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .grid_basis import BasisConfig
from .problem import ProblemSpec, manufacture
from .separable import SeparableFunction
from .solver import Discretization, solve
from .td import l2_distance, l2_norm

__all__ = [
    "CSV_COLUMNS", "EXACT_THRESHOLD", "StudyPlan", "StudyResult", "StudyRow",
    "field_errors", "fit_rate", "run_study", "with_basis",
]

CSV_COLUMNS = ("preset", "p", "s", "a", "M", "n", "dof_equiv", "rel_l2_error", "rate",
               "wall_seconds", "converged")
EXACT_THRESHOLD = 1e-8


def fit_rate(errors: Sequence[float], ns: Sequence[int]) -> float:
    """Least-squares slope of log(error) against log(h), h = 1/n.

    Non-positive or non-finite errors are skipped; fewer than two usable
    points raise ``ValueError``.
    """
    if len(errors) != len(ns):
        raise ValueError("errors and ns differ in length")
    pts = [(math.log(1.0 / n), math.log(e)) for e, n in zip(errors, ns)
           if np.isfinite(e) and e > 0 and n > 0]
    if len(pts) < 2:
        raise ValueError(f"rate fit needs at least 2 usable points, got {len(pts)}")
    x, y = np.array(pts).T
    if np.ptp(x) == 0:
        raise ValueError("rate fit needs distinct mesh sizes")
    return float(np.polyfit(x, y, 1)[0])


def with_basis(spec: ProblemSpec, n: int, basis: BasisConfig, dims: Iterable[str] | None = None) -> ProblemSpec:
    dims = set(dims) if dims is not None else set(spec.dim_names)
    new = tuple(d.refined(n, basis) if d.name in dims else d for d in spec.dimensions)
    return replace(spec, dimensions=new)


@dataclass
class StudyPlan:
    base: ProblemSpec
    exact: Mapping[str, SeparableFunction]
    levels: Sequence[int]
    hyperparameters: Sequence[tuple[int, int | None, float | None]] = ((1, None, None),)
    M: int | Sequence[int] | None = None
    dims: Sequence[str] | None = None
    seed: int | None = None
    label: str = ""
    solver_overrides: Mapping = field(default_factory=dict)

    def __post_init__(self):
        levels = list(self.levels)
        if len(levels) < 2:
            raise ValueError("a study needs >= 2 levels")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("levels must be strictly increasing")
        if not isinstance(self.M, (int, type(None))) and len(self.M) != len(levels):
            raise ValueError("per-level M must list one value per level")

    def mode_count(self, k: int) -> int:
        if self.M is None:
            return self.base.solver_params.M
        return self.M if isinstance(self.M, int) else int(self.M[k])


@dataclass
class StudyRow:
    preset: str
    p: int
    s: int
    a: float | None
    M: int
    n: int
    dof_equiv: int
    rel_l2_error: float
    rate: float | None
    wall_seconds: float
    converged: bool

    def csv_values(self) -> list[str]:
        def num(v):
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))
        return [self.preset, str(self.p), str(self.s), "" if self.a is None else repr(float(self.a)),
                str(self.M), str(self.n), str(self.dof_equiv), num(self.rel_l2_error),
                num(self.rate), f"{self.wall_seconds:.6f}", str(self.converged).lower()]


@dataclass
class StudyResult:
    rows: list[StudyRow] = field(default_factory=list)
    rates: dict = field(default_factory=dict)
    exact: dict = field(default_factory=dict)
    field_rates: dict = field(default_factory=dict)
    hardware: str = field(default_factory=platform.platform)

    def errors(self, hyper) -> list[float]:
        p, s, a = hyper
        return [r.rel_l2_error for r in self.rows if (r.p, r.s, r.a) == (p, s, a)]

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.rows)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow(r.csv_values())


def field_errors(state, exact: Mapping[str, SeparableFunction], tables) -> dict[str, tuple[float, float]]:
    """Per-field (absolute L2 error, L2 norm of the exact solution)."""
    return {k: (l2_distance(state[k], e, tables), l2_norm(e, tables)) for k, e in exact.items()}


def _combined(errs: Mapping[str, tuple[float, float]]) -> float:
    num = math.sqrt(sum(e * e for e, _ in errs.values()))
    den = math.sqrt(sum(n * n for _, n in errs.values()))
    if den == 0.0:
        raise ValueError("exact solution has zero L2 norm")
    return num / den


def _fit_window(values, ns):
    L = len(ns)
    k = max(2, L - 1)
    return values[-k:], ns[-k:]


def run_study(plan: StudyPlan) -> StudyResult:
    """Refine, manufacture, solve and measure for every hyperparameter set and level."""
    result = StudyResult()
    levels = list(plan.levels)
    name = plan.label or plan.base.name
    for p, s, a in plan.hyperparameters:
        basis = BasisConfig(p, s, a)
        rows = []
        per_field: dict[str, list[float]] = {k: [] for k in plan.exact}
        for k, n in enumerate(levels):
            spec = with_basis(plan.base, n, basis, plan.dims)
            params = dict(plan.solver_overrides)
            params["M"] = plan.mode_count(k)
            if plan.seed is not None:
                params["seed"] = plan.seed
            spec = manufacture(spec.with_params(**params), plan.exact)
            t0 = time.perf_counter()
            disc = Discretization(spec)
            state, report = solve(spec, disc=disc)
            errs = field_errors(state, plan.exact, disc.tables)
            wall = time.perf_counter() - t0
            for f, (e, nrm) in errs.items():
                per_field[f].append(e / nrm if nrm > 0 else e)
            dof = int(np.prod([d.n_nodes for d in spec.dimensions])) * len(spec.fields)
            rows.append(StudyRow(name, p, basis.s, a, spec.solver_params.M, n, dof,
                                 _combined(errs), None, wall, bool(report.converged)))
        errors = [r.rel_l2_error for r in rows]
        key = (p, basis.s, a)
        exact = all(e <= EXACT_THRESHOLD for e in errors)
        result.exact[key] = exact
        rate = None if exact else fit_rate(*_fit_window(errors, levels))
        result.rates[key] = rate
        result.field_rates[key] = {
            f: (None if exact else fit_rate(*_fit_window(v, levels))) for f, v in per_field.items()}
        for r in rows:
            r.rate = rate
        result.rows.extend(rows)
    return result
