"""Declarative space-parameter-time problems: dimensions, fields, separable weak-form terms.

A weak-form term is ``coefficient * prod_d int test_d * op_d * trial_d`` with
one :class:`~taps.assembly.OperatorKind` per dimension (``mass`` when a
dimension is not listed).  Terms whose test and trial fields differ couple
fields and are lagged to the right-hand side during a solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product as iproduct
from typing import Mapping

import numpy as np

from .assembly import MASS, Coordinate, FunctionWeight, Indicator, OperatorKind
from .grid_basis import DimensionSpec, Role, build_mesh
from .separable import Constant, Derivative, Factor, Monomial, Product, SeparableFunction, SeparableTerm

__all__ = [
    "Diagnostic", "FieldSpec", "ManufactureError", "NonlinearTerm", "ProblemSpec",
    "SolverParams", "WeakFormTerm", "manufacture", "validate",
]

_ROLE_ORDER = {Role.SPATIAL: 0, Role.PARAMETRIC: 1, Role.TEMPORAL: 2}


@dataclass(frozen=True)
class FieldSpec:
    name: str
    dims: tuple[str, ...]


@dataclass(frozen=True)
class WeakFormTerm:
    coefficient: float
    test_field: str
    trial_field: str
    ops: Mapping[str, OperatorKind] = field(default_factory=dict)
    label: str = ""

    def op(self, dim: str) -> OperatorKind:
        return self.ops.get(dim, MASS)

    @property
    def coupling(self) -> bool:
        return self.test_field != self.trial_field

    def to_dict(self):
        return {"coefficient": self.coefficient, "test": self.test_field, "trial": self.trial_field,
                "ops": {d: k.to_json() for d, k in self.ops.items()}, "label": self.label}


@dataclass(frozen=True)
class NonlinearTerm:
    """``coefficient * u**2`` in the strong form, linearized as ``u_prev * u``."""

    field: str
    coefficient: float = 1.0
    kind: str = "quadratic_reaction"

    def __post_init__(self):
        if self.kind != "quadratic_reaction":
            raise ValueError(f"unsupported nonlinear term {self.kind!r}")


@dataclass(frozen=True)
class SolverParams:
    M: int = 8
    tol_subspace: float = 1e-6
    max_sweeps: int = 200
    tol_nonlinear: float = 1e-6
    max_nonlinear: int = 50
    linear_solver: str = "direct_sparse"
    cg_tol: float = 1e-12
    cg_max_iter: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if min(self.tol_subspace, self.tol_nonlinear, self.cg_tol) <= 0:
            raise ValueError("tolerances must be > 0")
        if self.linear_solver not in ("direct_sparse", "conjugate_gradient"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    dimensions: tuple[DimensionSpec, ...]
    fields: tuple[FieldSpec, ...]
    lhs_terms: tuple[WeakFormTerm, ...]
    rhs: Mapping[str, SeparableFunction]
    nonlinear: tuple[NonlinearTerm, ...] = ()
    solver_params: SolverParams = field(default_factory=SolverParams)

    def dim(self, name: str) -> DimensionSpec:
        for d in self.dimensions:
            if d.name == name:
                return d
        raise KeyError(name)

    def field(self, name: str) -> FieldSpec:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    @property
    def dim_names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dimensions)

    def sweep_order(self) -> list[str]:
        """Spatial dimensions first, then parametric, then temporal (stable)."""
        return [d.name for d in sorted(self.dimensions, key=lambda d: _ROLE_ORDER[d.role])]

    def with_params(self, **changes) -> "ProblemSpec":
        return replace(self, solver_params=replace(self.solver_params, **changes))

    def refined(self, n_elements: int | Mapping[str, int], p: int | None = None,
                dims: set[str] | None = None) -> "ProblemSpec":
        """Re-mesh the selected dimensions (all by default), optionally with a new order p."""
        new = []
        for d in self.dimensions:
            if dims is not None and d.name not in dims:
                new.append(d)
                continue
            n = n_elements[d.name] if isinstance(n_elements, Mapping) else n_elements
            basis = d.basis if p is None else replace(d.basis, p=p, s=max(p, d.basis.s or p))
            new.append(d.refined(n, basis))
        return replace(self, dimensions=tuple(new))


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    where: str = ""

    def __str__(self):
        return f"[{self.code}] {self.where}: {self.message}" if self.where else f"[{self.code}] {self.message}"


_COERCIVE = {"mass", "stiffness", "weighted_mass", "weighted_stiffness"}


def validate(spec: ProblemSpec) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    dims = {d.name for d in spec.dimensions}
    if len(dims) != len(spec.dimensions):
        out.append(Diagnostic("duplicate-dimension", "dimension names must be unique"))
    fields = {f.name: f for f in spec.fields}
    if not fields:
        out.append(Diagnostic("no-fields", "problem declares no fields"))
    for f in spec.fields:
        for d in f.dims:
            if d not in dims:
                out.append(Diagnostic("unknown-dimension", f"field uses unknown dimension {d!r}", f"field {f.name}"))
    for k, t in enumerate(spec.lhs_terms):
        where = f"lhs_terms[{k}]" + (f" ({t.label})" if t.label else "")
        for fname in (t.test_field, t.trial_field):
            if fname not in fields:
                out.append(Diagnostic("unknown-field", f"term references unknown field {fname!r}", where))
        for d in t.ops:
            if d not in dims:
                out.append(Diagnostic("unknown-dimension", f"term references unknown dimension {d!r}", where))
        if t.test_field in fields and t.trial_field in fields:
            if set(fields[t.test_field].dims) != set(fields[t.trial_field].dims):
                out.append(Diagnostic("coupling-dims", "coupled fields must share their dimensions", where))
            extra = set(t.ops) - set(fields[t.test_field].dims)
            if extra & dims:
                out.append(Diagnostic("unknown-dimension",
                                      f"term uses dimensions {sorted(extra)} outside field {t.test_field!r}", where))
    for f in spec.fields:
        diag = [t for t in spec.lhs_terms if t.test_field == f.name and t.trial_field == f.name]
        if not any(all(t.op(d).name in _COERCIVE for d in f.dims) for t in diag):
            out.append(Diagnostic("coercivity",
                                  "no diagonal term with mass/stiffness factors in every dimension",
                                  f"field {f.name}"))
    for fname, r in spec.rhs.items():
        if fname not in fields:
            out.append(Diagnostic("unknown-field", f"forcing given for unknown field {fname!r}", "rhs"))
        else:
            extra = r.dims - set(fields[fname].dims)
            if extra:
                out.append(Diagnostic("unknown-dimension", f"forcing uses dimensions {sorted(extra)}", f"rhs.{fname}"))
    for k, nl in enumerate(spec.nonlinear):
        if nl.field not in fields:
            out.append(Diagnostic("unknown-field", f"nonlinear term on unknown field {nl.field!r}", f"nonlinear[{k}]"))
    for d in spec.dimensions:
        lo, hi = d.domain
        nodes = build_mesh(d).nodes
        for t in spec.lhs_terms:
            w = t.op(d.name).weight
            if isinstance(w, Indicator):
                for b in (w.lo, w.hi):
                    if lo <= b <= hi and np.min(np.abs(nodes - b)) > 1e-9 * (hi - lo):
                        out.append(Diagnostic("indicator-alignment",
                                              f"indicator bound {b} is not an element boundary",
                                              f"dimension {d.name}"))
    return out


class ManufactureError(ValueError):
    pass


def _strong_pieces(op: OperatorKind, g: Factor | None) -> list[tuple[float, Factor]]:
    """Strong-form image of one trial factor under a 1D operator kind, as a short sum."""
    g = g if g is not None else Constant(1.0)
    name, w = op.name, op.weight
    if name == "mass":
        return [(1.0, g)]
    if name == "stiffness":
        return [(-1.0, Derivative(g, 2))]
    if name == "mixed_nb":
        return [(1.0, Derivative(g, 1))]
    if name == "mixed_bn":
        return [(-1.0, Derivative(g, 1))]
    wf = _weight_factor(w)
    if name == "weighted_mass":
        return [(1.0, Product((wf, g)))]
    if name == "weighted_stiffness":
        # -(w g')' = -w' g' - w g''
        return [(-1.0, Product((Derivative(wf, 1), Derivative(g, 1)))),
                (-1.0, Product((wf, Derivative(g, 2))))]
    raise ManufactureError(f"no strong form for operator {op}")


def _weight_factor(w) -> Factor:
    if isinstance(w, Coordinate):
        return Monomial(1)
    if isinstance(w, FunctionWeight):
        return w.factor
    raise ManufactureError(f"cannot manufacture a forcing through weight {w!r}")


def _check_boundary(spec: ProblemSpec, fname: str, exact: SeparableFunction, tol: float = 1e-10):
    rng = np.random.default_rng(12345)
    fdims = spec.field(fname).dims
    for dname in fdims:
        d = spec.dim(dname)
        nodes = build_mesh(d).nodes
        for k in d.dirichlet_nodes:
            pt = {}
            for other in fdims:
                lo, hi = spec.dim(other).domain
                pt[other] = rng.uniform(lo, hi, size=16)
            pt[dname] = np.full(16, nodes[k])
            val = np.max(np.abs(exact.evaluate(pt)))
            if val > tol:
                raise ManufactureError(
                    f"exact {fname!r} is {val:.3g} on constrained node {k} of dimension {dname!r}")


def manufacture(spec: ProblemSpec, exact: Mapping[str, SeparableFunction],
                check_boundary: bool = True) -> ProblemSpec:
    """Replace the forcing so that ``exact`` solves the problem.

    Each term's strong operator is applied factor by factor with analytic
    derivatives; quadratic reactions add the expanded square of the exact field.
    Constrained nodes are eliminated with homogeneous values, so by default an
    exact solution that does not vanish there is rejected.
    """
    for fname in exact:
        spec.field(fname)
        if check_boundary:
            _check_boundary(spec, fname, exact[fname])
    rhs = {f.name: [] for f in spec.fields}
    for t in spec.lhs_terms:
        u = exact.get(t.trial_field)
        if u is None:
            continue
        dims = spec.field(t.test_field).dims
        for et in u.terms:
            per_dim = [_strong_pieces(t.op(d), et.factor(d)) for d in dims]
            for combo in iproduct(*per_dim):
                coef = t.coefficient * et.coefficient * float(np.prod([c for c, _ in combo]))
                facs = {d: f for d, (_, f) in zip(dims, combo)}
                rhs[t.test_field].append(SeparableTerm(coef, facs))
    for nl in spec.nonlinear:
        u = exact.get(nl.field)
        if u is not None:
            rhs[nl.field].extend((u * u).scaled(nl.coefficient).terms)
    new_rhs = {k: SeparableFunction(tuple(v)) for k, v in rhs.items()}
    return replace(spec, rhs=new_rhs)
