"""Separated (tensor-decomposition) fields and their 1D-contraction algebra.

Vectorization convention: ``vec`` stacks columns with the node index varying
fastest, so ``(C kron K) vec(U) == vec(K U C^T)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .assembly import MASS, assemble_load, assemble_operator
from .grid_basis import ShapeTable
from .separable import SeparableFunction

__all__ = [
    "TDField", "evaluate", "l2_distance", "l2_inner", "normalize_modes",
    "relative_l2_error", "unvec", "vec",
]


@dataclass(eq=False)
class TDField:
    """``u(x_1..x_D) = sum_m prod_d N~^[d](x_d) @ factors[d][:, m]``."""

    name: str
    dims: tuple[str, ...]
    factors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.dims = tuple(self.dims)
        missing = set(self.dims) - set(self.factors)
        if missing:
            raise ValueError(f"field {self.name!r}: no factors for {sorted(missing)}")
        self.factors = {d: np.array(self.factors[d], dtype=float, ndmin=2) for d in self.dims}
        ms = {f.shape[1] for f in self.factors.values()}
        if len(ms) != 1:
            raise ValueError(f"field {self.name!r}: factor matrices disagree on mode count {ms}")

    @property
    def M(self) -> int:
        return next(iter(self.factors.values())).shape[1]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.factors[d].shape[0] for d in self.dims)

    def copy(self) -> "TDField":
        return TDField(self.name, self.dims, {d: f.copy() for d, f in self.factors.items()})

    def scaled(self, a: float) -> "TDField":
        out = self.copy()
        out.factors[self.dims[0]] *= a
        return out

    def to_full(self) -> np.ndarray:
        """Full nodal tensor, first dimension fastest in Fortran order. Small fields only."""
        letters = "abcdefghijklmnopqrstuvwxy"[: len(self.dims)]
        expr = ",".join(f"{c}z" for c in letters) + "->" + letters
        return np.einsum(expr, *(self.factors[d] for d in self.dims))


def vec(U: np.ndarray) -> np.ndarray:
    return np.asarray(U).reshape(-1, order="F")


def unvec(v: np.ndarray, n: int, M: int) -> np.ndarray:
    v = np.asarray(v)
    if v.size != n * M:
        raise ValueError(f"cannot reshape vector of length {v.size} into {n}x{M}")
    return v.reshape((n, M), order="F")


def evaluate(field: TDField, tables: Mapping[str, ShapeTable], point: Mapping[str, float]):
    """Value at one point; array-valued coordinates are broadcast against each other."""
    arrays = [np.asarray(point[d], dtype=float) for d in field.dims]
    scalar = all(x.ndim == 0 for x in arrays)
    arrays = np.broadcast_arrays(*arrays)
    prod = np.ones((arrays[0].size, field.M))
    for d, x in zip(field.dims, arrays):
        prod *= tables[d].values_at(x.ravel()) @ field.factors[d]
    out = prod.sum(axis=1).reshape(arrays[0].shape)
    return float(out) if scalar else out


def _mass(table: ShapeTable, cache: dict | None):
    if cache is not None:
        if table.name not in cache:
            cache[table.name] = assemble_operator(table, MASS).values
        return cache[table.name]
    return assemble_operator(table, MASS).values


def l2_inner(a, b, tables: Mapping[str, ShapeTable], masses: dict | None = None) -> float:
    """L2 inner product over the tensor-product domain using only 1D contractions."""
    if isinstance(a, SeparableFunction) and isinstance(b, TDField):
        a, b = b, a
    if isinstance(a, TDField):
        dims = a.dims
        if isinstance(b, TDField):
            if set(b.dims) != set(dims):
                raise ValueError(f"dimension mismatch: {a.dims} vs {b.dims}")
            C = np.ones((a.M, b.M))
            for d in dims:
                C *= a.factors[d].T @ (_mass(tables[d], masses) @ b.factors[d])
            return float(C.sum())
        _check_sep_dims(b, dims)
        total = 0.0
        for t in b.terms:
            prod = np.full(a.M, t.coefficient)
            for d in dims:
                load = assemble_load(tables[d], t.factor(d)).values
                prod *= load @ a.factors[d]
            total += prod.sum()
        return float(total)
    dims = list(tables)
    _check_sep_dims(a, dims)
    _check_sep_dims(b, dims)
    total = 0.0
    for s in a.terms:
        for t in b.terms:
            val = s.coefficient * t.coefficient
            for d in dims:
                tab = tables[d]
                fs = s.factor(d)(tab.points) if s.factor(d) else 1.0
                ft = t.factor(d)(tab.points) if t.factor(d) else 1.0
                val *= float(np.sum(tab.weights * fs * ft))
            total += val
    return float(total)


def _check_sep_dims(f: SeparableFunction, dims: Sequence[str]):
    extra = f.dims - set(dims)
    if extra:
        raise ValueError(f"separable function uses unknown dimensions {sorted(extra)}")


def _quad_columns(obj, coef: float, tables: Mapping[str, ShapeTable], dims) -> tuple[list, list]:
    """Per-dimension sqrt(w)-scaled quadrature values of every rank-one term of ``obj``."""
    cols = {d: [] for d in dims}
    coeffs: list[float] = []
    if isinstance(obj, TDField):
        for d in dims:
            tab = tables[d]
            cols[d].append(np.sqrt(tab.flat_weights)[:, None] * tab.interpolate(obj.factors[d]))
        coeffs.extend([coef] * obj.M)
    else:
        for t in obj.terms:
            for d in dims:
                tab = tables[d]
                f = t.factor(d)
                v = f(tab.flat_points) if f is not None else np.ones(tab.flat_points.size)
                cols[d].append((np.sqrt(tab.flat_weights) * v)[:, None])
            coeffs.append(coef * t.coefficient)
    return cols, coeffs


def _cp_norm(columns: Sequence[np.ndarray], coeffs: np.ndarray) -> float:
    """Frobenius norm of ``sum_k coeffs[k] outer_d columns[d][:, k]`` by successive QR."""
    R = columns[0] * coeffs[None, :]
    if len(columns) == 1:
        return float(np.linalg.norm(R.sum(axis=1)))
    _, R = np.linalg.qr(R)
    for Phi in columns[1:-1]:
        # core (r, n, K) -> ((r n) x K)
        Z = (R[:, None, :] * Phi[None, :, :]).reshape(-1, R.shape[1])
        _, R = np.linalg.qr(Z)
    return float(np.linalg.norm(R @ columns[-1].T))


def l2_distance(a, b, tables: Mapping[str, ShapeTable]) -> float:
    """``||a - b||_L2`` for TD fields / separable functions without cancellation.

    The difference is a sum of rank-one terms sampled at the quadrature points;
    its norm is taken through orthogonal factorizations, so it stays accurate
    when ``a`` and ``b`` agree to many digits.
    """
    dims = a.dims if isinstance(a, TDField) else (b.dims if isinstance(b, TDField) else tuple(tables))
    ca, ka = _quad_columns(a, 1.0, tables, dims)
    cb, kb = _quad_columns(b, -1.0, tables, dims)
    coeffs = np.asarray(ka + kb, dtype=float)
    if coeffs.size == 0:
        return 0.0
    columns = [np.hstack(ca[d] + cb[d]) for d in dims]
    return _cp_norm(columns, coeffs)


def l2_norm(a, tables: Mapping[str, ShapeTable]) -> float:
    dims = a.dims if isinstance(a, TDField) else tuple(tables)
    cols, coeffs = _quad_columns(a, 1.0, tables, dims)
    if not coeffs:
        return 0.0
    return _cp_norm([np.hstack(cols[d]) for d in dims], np.asarray(coeffs))


def relative_l2_error(approx: TDField, exact: SeparableFunction,
                      tables: Mapping[str, ShapeTable]) -> float:
    """``||approx - exact|| / ||exact||`` in L2 over the whole tensor-product domain."""
    norm = l2_norm(exact, tables)
    if norm == 0.0:
        raise ValueError("exact solution has zero L2 norm")
    return l2_distance(approx, exact, tables) / norm


def normalize_modes(field: TDField) -> TDField:
    """Balance column norms of each mode across dimensions; the field itself is unchanged.

    Every dimension but the first gets a nonnegative largest-magnitude entry;
    the first dimension carries the sign of the mode.
    """
    out = field.copy()
    D = len(field.dims)
    for m in range(field.M):
        cols = [out.factors[d][:, m] for d in field.dims]
        norms = np.array([np.linalg.norm(c) for c in cols])
        if np.any(norms == 0.0):
            continue
        target = np.exp(np.mean(np.log(norms)))
        sign = 1.0
        for k, d in enumerate(field.dims):
            c = out.factors[d][:, m] * (target / norms[k])
            if k > 0:
                s = np.sign(c[np.argmax(np.abs(c))]) or 1.0
                c = c * s
                sign *= s
            out.factors[d][:, m] = c
        if D > 0:
            out.factors[field.dims[0]][:, m] *= sign
    return out
