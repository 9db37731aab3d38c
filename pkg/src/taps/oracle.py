"""Independent reference solvers: full tensor-product Galerkin and the banded 1D solve.

These assemble the whole Kronecker system explicitly, so they are only meant
for small grids, as a check on the separated solver.
"""
from __future__ import annotations

from dataclasses import replace
from functools import reduce
from typing import Mapping

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import MASS, Coordinate, FunctionWeight, OperatorKind, assemble_load, assemble_operator
from .grid_basis import Role, ShapeTable, shape_table
from .problem import ProblemSpec
from .separable import SeparableFunction, SeparableTerm
from .td import TDField

__all__ = [
    "OracleTooLarge", "banded_galerkin_solve", "fix_parameters", "full_l2_distance",
    "full_l2_norm", "oracle_full_solve", "td_at_parameters", "td_to_full",
]


class OracleTooLarge(ValueError):
    pass


def _kron_all(mats):
    # vec order puts the first dimension fastest, so it is the rightmost factor
    return reduce(lambda acc, m: sp.kron(m, acc, format="csr"), mats[1:], mats[0])


def oracle_full_solve(spec: ProblemSpec, max_unknowns: int = 200_000,
                      direct_limit: int = 20_000) -> dict[str, np.ndarray]:
    """Solve the full tensor-product Galerkin system; returns nodal tensors per field.

    Systems above ``direct_limit`` unknowns whose last dimension is temporal
    (mass and first-derivative terms only) are block-diagonalized in time.
    """
    if spec.nonlinear:
        raise ValueError("full-order oracle handles linear problems only")
    tables = {d.name: shape_table(d) for d in spec.dimensions}
    free = {d.name: d.free_nodes for d in spec.dimensions}
    fields = list(spec.fields)
    sizes = [int(np.prod([free[d].size for d in f.dims])) for f in fields]
    total = sum(sizes)
    if total > max_unknowns:
        raise OracleTooLarge(f"{total} unknowns exceed the oracle limit {max_unknowns}")
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    index = {f.name: k for k, f in enumerate(fields)}
    blocks = [[None] * len(fields) for _ in fields]
    for t in spec.lhs_terms:
        i, j = index[t.test_field], index[t.trial_field]
        dims = fields[i].dims
        if fields[j].dims != dims:
            raise ValueError("oracle needs coupled fields to list dimensions in the same order")
        mats = []
        for d in dims:
            K = assemble_operator(tables[d], t.op(d)).values
            mats.append(K[free[d]][:, free[d]])
        block = t.coefficient * _kron_all(mats)
        blocks[i][j] = block if blocks[i][j] is None else blocks[i][j] + block
    for k, n in enumerate(sizes):
        if blocks[k][k] is None:
            blocks[k][k] = sp.csr_matrix((n, n))
    A = sp.bmat(blocks, format="csc")
    b = np.zeros(total)
    for k, f in enumerate(fields):
        rhs = spec.rhs.get(f.name, SeparableFunction.zero())
        for term in rhs.terms:
            vecs = [assemble_load(tables[d], term.factor(d)).values[free[d]] for d in f.dims]
            b[offsets[k]:offsets[k + 1]] += term.coefficient * reduce(lambda acc, v: np.kron(v, acc), vecs[1:], vecs[0])
    x = None
    if A.shape[0] > direct_limit:
        x = _time_diagonalized_solve(spec, tables, free, b)
    if x is None:
        x = _solve(A, b)
    res = np.linalg.norm(A @ x - b)
    if res > 1e-9 * np.linalg.norm(b):
        raise RuntimeError(f"oracle residual {res:.3e} too large")
    out = {}
    for k, f in enumerate(fields):
        shape_free = tuple(free[d].size for d in f.dims)
        full = np.zeros(tuple(spec.dim(d).n_nodes for d in f.dims))
        full[np.ix_(*(free[d] for d in f.dims))] = x[offsets[k]:offsets[k + 1]].reshape(shape_free, order="F")
        out[f.name] = full
    return out


def _time_diagonalized_solve(spec, tables, free, b):
    """Solve ``G kron S_G + M_t kron S_M`` through the eigenvectors of ``M_t^-1 G``.

    Returns None when the problem does not have that structure.
    """
    if len(spec.fields) != 1:
        return None
    f = spec.fields[0]
    tdim = f.dims[-1]
    if spec.dim(tdim).role != Role.TEMPORAL:
        return None
    ft = free[tdim]
    parts = {"mass": None, "mixed_nb": None}
    for t in spec.lhs_terms:
        name = t.op(tdim).name
        if name not in parts or t.op(tdim).weight is not None:
            return None
        mats = [assemble_operator(tables[d], t.op(d)).values[free[d]][:, free[d]] for d in f.dims[:-1]]
        S = t.coefficient * _kron_all(mats)
        parts[name] = S if parts[name] is None else parts[name] + S
    if parts["mixed_nb"] is None:
        return None
    Mt = assemble_operator(tables[tdim], MASS).toarray()[np.ix_(ft, ft)]
    G = assemble_operator(tables[tdim], OperatorKind("mixed_nb")).toarray()[np.ix_(ft, ft)]
    lam, V = sla.eig(G, Mt)
    if np.linalg.cond(V) > 1e8:
        return None
    n_s = parts["mixed_nb"].shape[0]
    SM = parts["mass"] if parts["mass"] is not None else sp.csr_matrix((n_s, n_s))
    B = b.reshape((n_s, ft.size), order="F")
    # A = (M_t V kron I)(Lambda kron S_G + I kron S_M)(V^-1 kron I)
    C = np.linalg.solve(Mt @ V, B.T).T
    Y = np.empty_like(C)
    for k in range(ft.size):
        Y[:, k] = spla.splu((lam[k] * parts["mixed_nb"] + SM).tocsc()).solve(C[:, k])
    X = Y @ V.T
    if np.max(np.abs(X.imag)) > 1e-8 * max(np.max(np.abs(X.real)), 1e-300):
        return None
    return vec_f(X.real)


def vec_f(X):
    return X.reshape(-1, order="F")


def _solve(A, b):
    if A.shape[0] <= 20_000:
        return spla.splu(A).solve(b)
    ilu = spla.spilu(A, drop_tol=1e-5, fill_factor=20)
    prec = spla.LinearOperator(A.shape, matvec=ilu.solve)
    x, info = spla.gmres(A, b, M=prec, rtol=1e-13, atol=0.0, restart=200, maxiter=2000)
    if info != 0:
        raise RuntimeError(f"oracle GMRES did not converge (info={info})")
    return x


def banded_galerkin_solve(spec: ProblemSpec) -> np.ndarray:
    """Single-dimension, single-field Galerkin solve through a banded LU; nodal values."""
    if len(spec.dimensions) != 1 or len(spec.fields) != 1:
        raise ValueError("banded solve needs one dimension and one field")
    d = spec.dimensions[0]
    f = spec.fields[0]
    table = shape_table(d)
    A = sum(t.coefficient * assemble_operator(table, t.op(d.name)).toarray()
            for t in spec.lhs_terms)
    b = np.zeros(d.n_nodes)
    for term in spec.rhs.get(f.name, SeparableFunction.zero()).terms:
        b += term.coefficient * assemble_load(table, term.factor(d.name)).values
    fr = d.free_nodes
    A, b = A[np.ix_(fr, fr)], b[fr]
    rows, cols = np.nonzero(A)
    lower = int(np.max(rows - cols, initial=0))
    upper = int(np.max(cols - rows, initial=0))
    n = A.shape[0]
    ab = np.zeros((lower + upper + 1, n))
    for k in range(-lower, upper + 1):
        diag = np.diagonal(A, k)
        if k >= 0:
            ab[upper - k, k:] = diag
        else:
            ab[upper - k, :n + k] = diag
    out = np.zeros(d.n_nodes)
    out[fr] = sla.solve_banded((lower, upper), ab, b)
    return out


def _param_value(kind, value: float) -> float:
    if kind.name == "mass":
        return 1.0
    if kind.name == "weighted_mass":
        w = kind.weight
        if isinstance(w, Coordinate):
            return value
        if isinstance(w, FunctionWeight):
            return float(w.factor(value))
    raise ValueError(f"cannot collapse operator {kind} at a fixed parameter value")


def fix_parameters(spec: ProblemSpec, values: Mapping[str, float]) -> ProblemSpec:
    """Problem restricted to fixed values of the given parametric dimensions."""
    for name in values:
        if spec.dim(name).role != Role.PARAMETRIC:
            raise ValueError(f"{name!r} is not a parametric dimension")
    keep = tuple(d for d in spec.dimensions if d.name not in values)
    terms = []
    for t in spec.lhs_terms:
        scale = float(np.prod([_param_value(t.op(n), v) for n, v in values.items()]))
        ops = {d: k for d, k in t.ops.items() if d not in values}
        terms.append(replace(t, coefficient=t.coefficient * scale, ops=ops))
    rhs = {}
    for fname, func in spec.rhs.items():
        new = []
        for term in func.terms:
            scale = 1.0
            for n, v in values.items():
                fac = term.factor(n)
                scale *= float(fac(v)) if fac is not None else 1.0
            facs = {d: f for d, f in term.factors.items() if d not in values}
            new.append(SeparableTerm(term.coefficient * scale, facs))
        rhs[fname] = SeparableFunction(tuple(new))
    fields = tuple(replace(f, dims=tuple(d for d in f.dims if d not in values)) for f in spec.fields)
    return replace(spec, name=f"{spec.name}@fixed", dimensions=keep, fields=fields,
                   lhs_terms=tuple(terms), rhs=rhs)


def td_at_parameters(field: TDField, tables: Mapping[str, ShapeTable],
                     values: Mapping[str, float]) -> TDField:
    """Restrict a TD field to fixed parameter values, folding them into the first kept dimension."""
    kept = tuple(d for d in field.dims if d not in values)
    weight = np.ones(field.M)
    for n, v in values.items():
        weight *= (tables[n].values_at(np.array([float(v)])) @ field.factors[n])[0]
    facs = {d: field.factors[d].copy() for d in kept}
    facs[kept[0]] = facs[kept[0]] * weight[None, :]
    return TDField(field.name, kept, facs)


def td_to_full(field: TDField) -> np.ndarray:
    return field.to_full()


def _at_points(full: np.ndarray, interps) -> np.ndarray:
    out = full
    for axis, E in enumerate(interps):
        out = np.moveaxis(np.tensordot(E, out, axes=(1, axis)), 0, axis)
    return out


def full_l2_distance(a: np.ndarray, tables_a, b: np.ndarray | None, tables_b, quad_tables) -> float:
    """L2 distance of two nodal tensors on (possibly different) grids, by quadrature on ``quad_tables``.

    ``tables_*`` and ``quad_tables`` are sequences ordered like the tensor axes.
    """
    w = [q.flat_weights for q in quad_tables]
    va = _at_points(a, [ta.values_at(q.flat_points) for ta, q in zip(tables_a, quad_tables)])
    if b is not None:
        va = va - _at_points(b, [tb.values_at(q.flat_points) for tb, q in zip(tables_b, quad_tables)])
    sq = va ** 2
    for axis in range(sq.ndim - 1, -1, -1):
        sq = np.tensordot(sq, w[axis], axes=(axis, 0))
    return float(np.sqrt(sq))


def full_l2_norm(a: np.ndarray, tables, quad_tables=None) -> float:
    return full_l2_distance(a, tables, None, None, quad_tables or tables)
