"""Subspace iteration for separated space-parameter-time fields.

One update fixes every dimension but ``d`` and solves the Galerkin system

    sum_t (C_t kron K_t) vec(U^[d]) = vec(Q^[d])

where ``K_t`` is the 1D operator of term ``t`` in dimension ``d`` and ``C_t``
the Hadamard product of the term's Gram contractions over the other
dimensions.  Quadratic reactions are handled by fixed-point iteration, each
mode ``p`` of the previous iterate contributing a ``Gamma_p kron M^[d](p)``
addend built from solution-weighted mass matrices.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    IndexMap, LoadVector1D, OperatorKind, OperatorMatrix1D, PreviousSolutionMode,
    assemble_load, assemble_operator, weighted_mass,
)
from .grid_basis import ShapeTable, shape_table
from .problem import ProblemSpec, SolverParams, WeakFormTerm, validate
from .separable import SeparableFunction
from .td import TDField, l2_distance, l2_norm, normalize_modes, vec

__all__ = [
    "Discretization", "LinearSolveError", "SolveReport", "SubspaceSystem", "assemble_rhs",
    "build_system", "contract_coefficients", "fixed_point_step", "init_factors", "solve",
    "solve_subspace", "subspace_residual", "sweep",
]

log = logging.getLogger(__name__)

ITERATIVE_THRESHOLD = 200_000
DENSE_THRESHOLD = 2000
RANK_CUTOFF = 1e-12
GMRES_RESTART = 200


class LinearSolveError(RuntimeError):
    pass


class Discretization:
    """Shape tables, free-node maps and cached 1D operators/loads of one problem."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.tables: dict[str, ShapeTable] = {d.name: shape_table(d) for d in spec.dimensions}
        self.imaps = {d.name: IndexMap(d.n_nodes, d.free_nodes) for d in spec.dimensions}
        self._ops: dict[tuple[str, OperatorKind], OperatorMatrix1D] = {}
        self._loads: dict = {}

    def operator(self, dim: str, kind: OperatorKind, fields=None) -> OperatorMatrix1D:
        if isinstance(kind.weight, PreviousSolutionMode):
            return assemble_operator(self.tables[dim], kind, fields)
        key = (dim, kind)
        if key not in self._ops:
            self._ops[key] = assemble_operator(self.tables[dim], kind)
        return self._ops[key]

    def term_operators(self, term: WeakFormTerm) -> dict[str, OperatorMatrix1D]:
        dims = self.spec.field(term.test_field).dims
        return {d: self.operator(d, term.op(d)) for d in dims}

    def rhs_loads(self, fname: str) -> dict[tuple[int, str], LoadVector1D]:
        if fname not in self._loads:
            f = self.spec.rhs.get(fname, SeparableFunction.zero())
            dims = self.spec.field(fname).dims
            self._loads[fname] = {
                (r, d): assemble_load(self.tables[d], t.factor(d), provenance=f"rhs[{fname}][{r}]")
                for r, t in enumerate(f.terms) for d in dims}
        return self._loads[fname]


@dataclass
class SubspaceSystem:
    field: str
    dim: str
    pairs: list[tuple[np.ndarray, OperatorMatrix1D]]
    Q: np.ndarray
    imap: IndexMap

    def merged(self) -> list[tuple[np.ndarray, OperatorMatrix1D]]:
        """Pairs sharing one operator matrix, with their coefficient matrices summed."""
        groups: dict[int, list] = {}
        for C, K in self.pairs:
            g = groups.setdefault(id(K), [np.zeros_like(C), K])
            g[0] = g[0] + C
        return [(C, K) for C, K in groups.values()]

    def _free_block(self, K: OperatorMatrix1D):
        f = self.imap.free
        return K.values[f][:, f]

    def matrix(self) -> sp.csc_matrix:
        A = None
        for C, K in self.merged():
            block = sp.kron(sp.csr_matrix(C), self._free_block(K), format="csc")
            A = block if A is None else A + block
        return A.tocsc()

    def dense_matrix(self) -> np.ndarray:
        n = self.imap.free.size * self.Q.shape[1]
        A = np.zeros((n, n))
        for C, K in self.merged():
            A += np.kron(C, self._free_block(K).toarray())
        return A

    def rhs(self) -> np.ndarray:
        return vec(self.Q[self.imap.free])

    @property
    def symmetric(self) -> bool:
        return all(K.symmetric and np.allclose(C, C.T, rtol=1e-12, atol=0) for C, K in self.pairs)


@dataclass
class SolveReport:
    sweeps: int = 0
    deltas: list[float] = field(default_factory=list)
    factor_deltas: list[float] = field(default_factory=list)
    nonlinear_iterations: int = 0
    nonlinear_changes: list[float] = field(default_factory=list)
    residuals: dict[str, float] = field(default_factory=dict)
    wall_seconds: float = 0.0
    converged: bool = False
    subspace_converged: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def contract_coefficients(term: WeakFormTerm, fields: Mapping[str, TDField],
                          operators: Mapping[str, OperatorMatrix1D], target: str) -> np.ndarray:
    """Hadamard product over non-target dimensions of ``U_test^T K V_trial``."""
    test, trial = fields[term.test_field], fields[term.trial_field]
    C = np.ones((test.M, trial.M))
    for d in test.dims:
        if d == target:
            continue
        if d not in operators:
            raise ValueError(f"missing operator for dimension {d!r} of term {term.label or term}")
        K = operators[d]
        K = K.values if isinstance(K, OperatorMatrix1D) else K
        C *= test.factors[d].T @ (K @ trial.factors[d])
    return C


def assemble_rhs(spec: ProblemSpec, fields: Mapping[str, TDField], loads: Mapping[tuple[int, str], LoadVector1D],
                 target: str, target_field: str, disc: Discretization | None = None,
                 grams: "GramCache | None" = None) -> np.ndarray:
    """Right-hand side ``Q`` (n_d x M) of one subspace problem, lagged couplings included."""
    u = fields[target_field]
    f = spec.rhs.get(target_field, SeparableFunction.zero())
    Q = np.zeros((u.factors[target].shape[0], u.M))
    for r, t in enumerate(f.terms):
        try:
            weight = np.full(u.M, t.coefficient)
            for d in u.dims:
                if d != target:
                    weight *= loads[(r, d)].values @ u.factors[d]
            Q += np.outer(loads[(r, target)].values, weight)
        except KeyError as exc:
            raise ValueError(f"missing load vector {exc.args[0]} for field {target_field!r}") from None
    if disc is not None:
        for term in spec.lhs_terms:
            if term.test_field == target_field and term.coupling:
                if grams is not None:
                    C = grams.coefficients(term, fields, target)
                else:
                    C = contract_coefficients(term, fields, disc.term_operators(term), target)
                V = fields[term.trial_field].factors[target]
                K = disc.operator(target, term.op(target)).values
                Q -= term.coefficient * (K @ V) @ C.T
    return Q


def _nonlinear_operators(disc: Discretization, spec: ProblemSpec, prev: Mapping[str, TDField]):
    """Solution-weighted mass matrices M^[d](p) for every reacting field, dimension and mode."""
    out = {}
    for nl in spec.nonlinear:
        w = prev[nl.field]
        for d in w.dims:
            for p in range(w.M):
                kind = weighted_mass(PreviousSolutionMode(nl.field, p))
                out[(nl.field, d, p)] = disc.operator(d, kind, prev)
    return out


class GramCache:
    """``U_test^T K U_trial`` per (test, trial, dimension, operator), dropped when a factor changes."""

    def __init__(self, disc: Discretization):
        self.disc = disc
        self._store: dict = {}

    def get(self, fields, test: str, trial: str, dim: str, kind: OperatorKind) -> np.ndarray:
        key = (test, trial, dim, kind)
        if key not in self._store:
            K = self.disc.operator(dim, kind).values
            self._store[key] = fields[test].factors[dim].T @ (K @ fields[trial].factors[dim])
        return self._store[key]

    def invalidate(self, field_name: str, dim: str):
        for key in [k for k in self._store if k[2] == dim and field_name in k[:2]]:
            del self._store[key]

    def coefficients(self, term: WeakFormTerm, fields, target: str) -> np.ndarray:
        test, trial = fields[term.test_field], fields[term.trial_field]
        C = np.ones((test.M, trial.M))
        for d in test.dims:
            if d != target:
                C *= self.get(fields, term.test_field, term.trial_field, d, term.op(d))
        return C


def build_system(disc: Discretization, fields: Mapping[str, TDField], fname: str, target: str,
                 nl_ops: Mapping | None = None, grams: GramCache | None = None) -> SubspaceSystem:
    spec = disc.spec
    grams = grams or GramCache(disc)
    pairs = []
    for term in spec.lhs_terms:
        if term.test_field == fname and not term.coupling:
            C = grams.coefficients(term, fields, target)
            pairs.append((term.coefficient * C, disc.operator(target, term.op(target))))
    if nl_ops:
        u = fields[fname]
        for nl in spec.nonlinear:
            if nl.field != fname:
                continue
            n_prev = 1 + max(p for (f, _, p) in nl_ops if f == fname)
            for p in range(n_prev):
                G = np.ones((u.M, u.M))
                for d in u.dims:
                    if d != target:
                        G *= u.factors[d].T @ (nl_ops[(fname, d, p)].values @ u.factors[d])
                pairs.append((nl.coefficient * G, nl_ops[(fname, target, p)]))
    Q = assemble_rhs(spec, fields, disc.rhs_loads(fname), target, fname, disc, grams)
    return SubspaceSystem(fname, target, pairs, Q, disc.imaps[target])


def solve_subspace(system: SubspaceSystem, params: SolverParams, where: str = "") -> np.ndarray:
    """Solve one Kronecker-structured subspace problem; constrained rows come back as zeros."""
    b = system.rhs()
    n_free = system.imap.free.size
    M = system.Q.shape[1]
    if not np.any(b):
        return np.zeros_like(system.Q)
    iterative = params.linear_solver == "conjugate_gradient" or b.size > ITERATIVE_THRESHOLD
    if not iterative and b.size <= DENSE_THRESHOLD:
        A = system.dense_matrix()
        x = _dense_solve(A, b, where)
        if not np.all(np.isfinite(x)):
            raise LinearSolveError(f"direct solve produced non-finite values {where}")
        return system.imap.expand(x.reshape((n_free, M), order="F"))
    A = system.matrix()
    if not iterative:
        try:
            lu = spla.splu(A)
            x = lu.solve(b)
            r = b - A @ x
            if np.linalg.norm(r) > 1e-12 * np.linalg.norm(b):
                x += lu.solve(r)
        except RuntimeError as exc:
            raise LinearSolveError(f"direct solve failed {where}: {exc}") from None
        if not np.all(np.isfinite(x)):
            raise LinearSolveError(f"direct solve produced non-finite values {where}")
    else:
        diag = A.diagonal()
        if np.any(diag == 0):
            raise LinearSolveError(f"zero diagonal in subspace matrix {where}")
        prec = spla.LinearOperator(A.shape, matvec=lambda v: v / diag)
        if system.symmetric:
            x, info = spla.cg(A, b, rtol=params.cg_tol, atol=0.0, maxiter=params.cg_max_iter, M=prec)
        else:
            # bicgstab stagnates on the ill-conditioned first-order time systems
            restart = min(b.size, GMRES_RESTART)
            x, info = spla.gmres(A, b, rtol=params.cg_tol, atol=0.0, restart=restart,
                                 maxiter=max(1, params.cg_max_iter // restart), M=prec)
        if info != 0:
            raise LinearSolveError(f"iterative solve did not converge {where} (info={info})")
    return system.imap.expand(x.reshape((n_free, M), order="F"))


def _dense_solve(A: np.ndarray, b: np.ndarray, where: str) -> np.ndarray:
    """LU solve; singular or ill-conditioned systems get the truncated minimum-norm solution.

    Rank deficiency comes from redundant modes (a field of lower separation
    rank than M); the null directions do not change the field.
    """
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            return sla.solve(A, b, check_finite=False)
    except (sla.LinAlgError, sla.LinAlgWarning):
        pass
    if not np.all(np.isfinite(A)):
        raise LinearSolveError(f"non-finite subspace matrix {where}")
    x, *_ = sla.lstsq(A, b, cond=RANK_CUTOFF, check_finite=False)
    return x


def subspace_residual(system: SubspaceSystem, U: np.ndarray) -> float:
    A = system.dense_matrix() if system.rhs().size <= DENSE_THRESHOLD else system.matrix()
    b = system.rhs()
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ vec(U[system.imap.free]) - b)
    return float(r / nb) if nb > 0 else float(r)


def init_factors(spec: ProblemSpec, seed: int | None = None, M: int | None = None,
                 disc: Discretization | None = None) -> dict[str, TDField]:
    """Uniform [-1, 1] factors with constrained rows zeroed and modes balanced."""
    seed = spec.solver_params.seed if seed is None else seed
    M = spec.solver_params.M if M is None else M
    rng = np.random.default_rng(seed)
    out = {}
    for f in spec.fields:
        facs = {}
        for d in f.dims:
            ds = spec.dim(d)
            U = rng.uniform(-1.0, 1.0, size=(ds.n_nodes, M))
            U[list(ds.dirichlet_nodes)] = 0.0
            facs[d] = U
        out[f.name] = normalize_modes(TDField(f.name, f.dims, facs))
    return out


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.linalg.norm(new - old) / max(np.linalg.norm(old), 1e-300))


def sweep(disc: Discretization, state: dict[str, TDField], params: SolverParams,
          nl_ops: Mapping | None = None, sweep_index: int = 0,
          factor_changes: list | None = None) -> tuple[dict[str, TDField], float]:
    """Update every dimension of every field once.

    Returns the new state and the largest relative L2 change of any field.
    Factor matrices are not a valid measure: with redundant modes they keep
    drifting between equivalent decompositions while the field is stationary.
    """
    spec = disc.spec
    old = {k: normalize_modes(v) for k, v in state.items()}
    state = {k: v.copy() for k, v in state.items()}
    grams = GramCache(disc)
    for d in spec.sweep_order():
        for f in spec.fields:
            if d not in f.dims:
                continue
            system = build_system(disc, state, f.name, d, nl_ops, grams)
            state[f.name].factors[d] = solve_subspace(
                system, params, where=f"(field {f.name}, dimension {d}, sweep {sweep_index})")
            grams.invalidate(f.name, d)
    state = {k: normalize_modes(v) for k, v in state.items()}
    delta = max(_relative_distance(state[k], old[k], disc.tables) for k in state)
    if factor_changes is not None:
        factor_changes.append(max(_relative_change(state[f].factors[d], old[f].factors[d])
                                  for f in state for d in state[f].dims))
    return state, delta


def _relative_distance(new: TDField, old: TDField, tables) -> float:
    return float(l2_distance(new, old, tables) / max(l2_norm(old, tables), 1e-300))


def _run_sweeps(disc, state, params, report, nl_ops=None):
    converged = False
    for _ in range(params.max_sweeps):
        state, delta = sweep(disc, state, params, nl_ops, report.sweeps, report.factor_deltas)
        report.sweeps += 1
        report.deltas.append(delta)
        if delta <= params.tol_subspace:
            converged = True
            break
    return state, converged


def _field_change(new: Mapping[str, TDField], old: Mapping[str, TDField] | None, tables) -> float:
    num = den = 0.0
    for k, u in new.items():
        nu = l2_norm(u, tables)
        den += nu ** 2
        num += (l2_distance(u, old[k], tables) if old is not None else nu) ** 2
    return float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num))


def fixed_point_step(disc: Discretization, state: dict[str, TDField], params: SolverParams,
                     report: SolveReport | None = None):
    """One linearized solve with reaction weights frozen at ``state``.

    Returns ``(new_state, relative L2 change, subspace converged flag)``.
    """
    report = report if report is not None else SolveReport()
    nl_ops = _nonlinear_operators(disc, disc.spec, state)
    new, ok = _run_sweeps(disc, {k: v.copy() for k, v in state.items()}, params, report, nl_ops)
    return new, _field_change(new, state, disc.tables), ok


def solve(spec: ProblemSpec, params: SolverParams | None = None, *, state: dict | None = None,
          disc: Discretization | None = None) -> tuple[dict[str, TDField], SolveReport]:
    """Run subspace sweeps (inside fixed-point iterations for reactive problems).

    Non-convergence is reported through ``report.converged``; the best state
    reached is returned either way.
    """
    diags = validate(spec)
    if diags:
        raise ValueError("invalid problem: " + "; ".join(map(str, diags)))
    params = params or spec.solver_params
    disc = disc or Discretization(spec)
    t0 = time.perf_counter()
    report = SolveReport()
    state = state or init_factors(spec, params.seed, params.M, disc)
    prev = None
    nl_ops = None
    if not spec.nonlinear:
        state, ok = _run_sweeps(disc, state, params, report)
        report.nonlinear_iterations = 1
        report.subspace_converged = ok
        report.converged = ok
    else:
        for _ in range(params.max_nonlinear):
            nl_ops = _nonlinear_operators(disc, spec, prev) if prev is not None else None
            state, ok = _run_sweeps(disc, state, params, report, nl_ops)
            change = _field_change(state, prev, disc.tables)
            report.nonlinear_iterations += 1
            report.nonlinear_changes.append(change)
            report.subspace_converged = ok
            prev = {k: v.copy() for k, v in state.items()}
            log.debug("fixed-point iteration %d: change %.3e", report.nonlinear_iterations, change)
            if change <= params.tol_nonlinear:
                report.converged = ok
                break
    for f in spec.fields:
        for d in f.dims:
            system = build_system(disc, state, f.name, d, nl_ops)
            report.residuals[f"{f.name}/{d}"] = subspace_residual(system, state[f.name].factors[d])
    report.wall_seconds = time.perf_counter() - t0
    return state, report
