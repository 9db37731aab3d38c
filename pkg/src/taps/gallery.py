"""Desk-scale reproductions of the demonstration problems, driven by fixture configs."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

import numpy as np

from .config import build_problem, exact_from_config, parse_config
from .grid_basis import Role
from .mms import StudyPlan, StudyResult, run_study
from .oracle import fix_parameters, full_l2_distance, full_l2_norm, oracle_full_solve, td_at_parameters
from .presets import preset
from .problem import ProblemSpec
from .solver import Discretization, solve
from .td import TDField

__all__ = [
    "GalleryEntry", "GalleryError", "GalleryOutcome", "ParametricSample", "list_gallery",
    "parametric_check", "run_gallery",
]


class GalleryError(AssertionError):
    pass


@dataclass(frozen=True)
class GalleryEntry:
    id: str
    description: str
    kind: str
    data: dict

    @property
    def expect(self) -> dict:
        return self.data.get("expect", {})


@dataclass
class ParametricSample:
    values: dict[str, float]
    distance: float
    discretization_error: float
    reference_norm: float

    @property
    def ratio(self) -> float:
        return self.distance / self.discretization_error


@dataclass
class GalleryOutcome:
    entry: GalleryEntry
    study: StudyResult | None = None
    samples: list[ParametricSample] = field(default_factory=list)
    converged: bool = True
    checks: list[tuple[str, bool, str]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)


def list_gallery() -> list[GalleryEntry]:
    out = []
    for item in sorted(resources.files("taps").joinpath("gallery_configs").iterdir(), key=lambda p: p.name):
        if item.name.endswith(".json"):
            d = json.loads(item.read_text())
            out.append(GalleryEntry(d["id"], d["description"], d["kind"], d))
    return out


def _entry(entry: GalleryEntry | str) -> GalleryEntry:
    if isinstance(entry, GalleryEntry):
        return entry
    for e in list_gallery():
        if e.id == entry:
            return e
    raise KeyError(f"no gallery entry {entry!r}")


def parametric_check(spec: ProblemSpec, samples: int = 5, seed: int = 0,
                     state: dict[str, TDField] | None = None,
                     disc: Discretization | None = None) -> tuple[list[ParametricSample], bool]:
    """Compare fixed-parameter slices of the separated solution with per-sample full solves.

    The discretization error of each per-sample solve is estimated against the
    same problem on a mesh twice as fine in every non-parametric dimension.
    Returns the samples and the solver's convergence flag.
    """
    disc = disc or Discretization(spec)
    converged = True
    if state is None:
        state, report = solve(spec, disc=disc)
        converged = report.converged
    params = [d for d in spec.dimensions if d.role == Role.PARAMETRIC]
    other = [d.name for d in spec.dimensions if d.role != Role.PARAMETRIC]
    fine_spec = spec.refined({d: 2 * spec.dim(d).n_elements for d in other}, dims=set(other))
    rng = np.random.default_rng(seed)
    out = []
    fname = spec.fields[0].name
    for _ in range(samples):
        values = {d.name: float(rng.uniform(*d.domain)) for d in params}
        coarse = fix_parameters(spec, values)
        fine = fix_parameters(fine_spec, values)
        uh = oracle_full_solve(coarse)[fname]
        uf = oracle_full_solve(fine)[fname]
        ct = Discretization(coarse).tables
        ft = Discretization(fine).tables
        dims = coarse.field(fname).dims
        ctab = [ct[d] for d in dims]
        ftab = [ft[d] for d in dims]
        disc_err = full_l2_distance(uh, ctab, uf, ftab, ftab)
        td = td_at_parameters(state[fname], disc.tables, values)
        td_full = TDField(td.name, dims, {d: td.factors[d] for d in dims}).to_full()
        dist = full_l2_distance(td_full, ctab, uh, ctab, ctab)
        out.append(ParametricSample(values, dist, disc_err, full_l2_norm(uh, ctab)))
    return out, converged


def run_gallery(entry: GalleryEntry | str, check: bool = True) -> GalleryOutcome:
    """Run one entry and evaluate its expected outcomes; raises GalleryError on failure if ``check``."""
    entry = _entry(entry)
    outcome = GalleryOutcome(entry)
    exp = entry.expect
    if entry.kind == "study":
        cfg = parse_config(entry.data["config"])
        spec, label = build_problem(cfg)
        st = cfg.study
        plan = StudyPlan(spec, exact_from_config(cfg, spec, label), st.levels,
                         [(h.p, h.s, h.a) for h in st.hyperparameters], M=st.M, dims=st.dims, label=label)
        res = run_study(plan)
        outcome.study = res
        outcome.converged = res.all_converged
        tol = exp.get("rate_tolerance", 0.4)
        for (p, s, a), rate in res.rates.items():
            ok = rate is not None and abs(rate - (p + 1)) <= tol
            outcome.checks.append((f"rate p={p}", ok, f"{rate} vs {p + 1} +- {tol}"))
    elif entry.kind == "parametric":
        d: dict[str, Any] = entry.data
        spec = preset(d["problem"], n=d["n"], M=d["M"]).with_params(seed=d.get("seed", 0))
        samples, converged = parametric_check(spec, d.get("samples", 5), d.get("seed", 0))
        outcome.samples = samples
        outcome.converged = converged
        limit = exp.get("max_ratio", 2.0)
        for k, smp in enumerate(samples):
            outcome.checks.append((f"sample {k}", smp.ratio <= limit, f"ratio {smp.ratio:.3f} <= {limit}"))
    else:
        raise ValueError(f"unknown gallery kind {entry.kind!r}")
    if exp.get("converged"):
        outcome.checks.append(("converged", outcome.converged, ""))
    if check and not outcome.passed:
        failed = [f"{n}: {msg}" for n, ok, msg in outcome.checks if not ok]
        raise GalleryError(f"gallery entry {entry.id!r} failed: " + "; ".join(failed))
    return outcome
