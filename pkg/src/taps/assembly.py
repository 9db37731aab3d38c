"""Assembly of 1D operator matrices and load vectors from a :class:`ShapeTable`."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .grid_basis import ShapeTable
from .separable import Factor, factor_from_dict

__all__ = [
    "Coordinate", "FunctionWeight", "IndexMap", "Indicator", "LoadVector1D",
    "MASS", "MIXED_BN", "MIXED_NB", "OperatorKind", "OperatorMatrix1D",
    "PreviousSolutionMode", "STIFFNESS", "WeightError", "apply_dirichlet", "assemble_load",
    "assemble_operator", "weight_from_dict", "weighted_mass", "weighted_stiffness",
]


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class Coordinate:
    """w(x) = x"""

    def to_dict(self):
        return {"kind": "coordinate"}


@dataclass(frozen=True)
class Indicator:
    """w = 1 on [lo, hi], 0 elsewhere; bounds must sit on element boundaries."""

    lo: float
    hi: float

    def to_dict(self):
        return {"kind": "indicator", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class FunctionWeight:
    factor: Factor

    def to_dict(self):
        return {"kind": "function", "factor": self.factor.to_dict()}


@dataclass(frozen=True)
class PreviousSolutionMode:
    """Mode ``mode`` of field ``field`` of the current iterate, in this dimension."""

    field: str
    mode: int

    def to_dict(self):
        return {"kind": "previous_mode", "field": self.field, "mode": self.mode}


Weight = Coordinate | Indicator | FunctionWeight | PreviousSolutionMode


def weight_from_dict(d: Mapping) -> Weight:
    kind = d.get("kind")
    if kind == "coordinate":
        return Coordinate()
    if kind == "indicator":
        return Indicator(float(d["lo"]), float(d["hi"]))
    if kind == "function":
        return FunctionWeight(factor_from_dict(d["factor"]))
    if kind == "previous_mode":
        return PreviousSolutionMode(str(d["field"]), int(d["mode"]))
    raise ValueError(f"unknown weight kind {kind!r}")


_TEST_TRIAL = {
    # kind -> (test uses derivative, trial uses derivative)
    "mass": (False, False),
    "stiffness": (True, True),
    "mixed_nb": (False, True),
    "mixed_bn": (True, False),
    "weighted_mass": (False, False),
    "weighted_stiffness": (True, True),
}


@dataclass(frozen=True)
class OperatorKind:
    """Which 1D bilinear form to integrate: ``int test_i * w * trial_j``.

    ``mixed_nb`` puts the derivative on the trial side (int N_i B_j), which is
    what a first-order time derivative produces; ``mixed_bn`` is its transpose.
    """

    name: str
    weight: Weight | None = None

    def __post_init__(self):
        if self.name not in _TEST_TRIAL:
            raise ValueError(f"unknown operator kind {self.name!r}")
        weighted = self.name.startswith("weighted")
        if weighted and self.weight is None:
            raise ValueError(f"{self.name} needs a weight")
        if not weighted and self.weight is not None:
            raise ValueError(f"{self.name} takes no weight")

    @property
    def symmetric(self) -> bool:
        return self.name not in ("mixed_nb", "mixed_bn")

    def to_json(self):
        if self.weight is None:
            return self.name
        return {"op": self.name, "weight": self.weight.to_dict()}

    @classmethod
    def from_json(cls, obj) -> "OperatorKind":
        if isinstance(obj, str):
            return cls(obj)
        obj = dict(obj)
        extra = set(obj) - {"op", "weight"}
        if extra:
            raise ValueError(f"unknown operator keys {sorted(extra)}")
        w = obj.get("weight")
        return cls(obj["op"], weight_from_dict(w) if w is not None else None)

    def __str__(self):
        if self.weight is None:
            return self.name
        return f"{self.name}[{self.weight}]"


MASS = OperatorKind("mass")
STIFFNESS = OperatorKind("stiffness")
MIXED_NB = OperatorKind("mixed_nb")
MIXED_BN = OperatorKind("mixed_bn")


def weighted_mass(w: Weight) -> OperatorKind:
    return OperatorKind("weighted_mass", w)


def weighted_stiffness(w: Weight) -> OperatorKind:
    return OperatorKind("weighted_stiffness", w)


@dataclass(frozen=True, eq=False)
class OperatorMatrix1D:
    dim: str
    kind: OperatorKind
    values: sp.csr_matrix
    symmetric: bool

    @property
    def shape(self):
        return self.values.shape

    def toarray(self) -> np.ndarray:
        return self.values.toarray()

    def __matmul__(self, other):
        return self.values @ other


@dataclass(frozen=True, eq=False)
class LoadVector1D:
    dim: str
    values: np.ndarray
    provenance: str = ""


def _weight_values(table: ShapeTable, w: Weight, fields) -> np.ndarray:
    x = table.points
    if isinstance(w, Coordinate):
        return x
    if isinstance(w, Indicator):
        nodes = table.mesh.nodes
        tol = 1e-9 * (nodes[-1] - nodes[0])
        for b in (w.lo, w.hi):
            inside = nodes[0] - tol < b < nodes[-1] + tol
            if inside and np.min(np.abs(nodes - b)) > tol:
                raise WeightError(f"indicator bound {b} is not on an element boundary of {table.name!r}")
        return ((x >= w.lo) & (x <= w.hi)).astype(float)
    if isinstance(w, FunctionWeight):
        return np.asarray(w.factor(x), dtype=float)
    if isinstance(w, PreviousSolutionMode):
        if fields is None or w.field not in fields:
            raise WeightError(f"unresolved previous-solution weight: no field {w.field!r}")
        fac = fields[w.field].factors.get(table.name)
        if fac is None or w.mode >= fac.shape[1]:
            raise WeightError(f"unresolved previous-solution weight {w} in {table.name!r}")
        col = fac[:, w.mode]
        return np.einsum("eqj,ej->eq", table.N, col[table.support])
    raise WeightError(f"unsupported weight {w!r}")


def _scatter(table: ShapeTable, local: np.ndarray) -> sp.csr_matrix:
    n = table.n_nodes
    sup = table.support
    rows = np.broadcast_to(sup[:, :, None], local.shape)
    cols = np.broadcast_to(sup[:, None, :], local.shape)
    # padded support slots carry zero values, duplicates are summed
    mat = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


def assemble_operator(table: ShapeTable, kind: OperatorKind,
                      fields: Mapping | None = None) -> OperatorMatrix1D:
    """Gauss-quadrature assembly of ``int test_i(x) w(x) trial_j(x) dx``.

    ``fields`` maps field names to TD fields and is only consulted for
    :class:`PreviousSolutionMode` weights.
    """
    test_d, trial_d = _TEST_TRIAL[kind.name]
    w = table.weights
    if kind.weight is not None:
        w = w * _weight_values(table, kind.weight, fields)
    test = table.B if test_d else table.N
    trial = table.B if trial_d else table.N
    local = np.einsum("eqi,eq,eqj->eij", test, w, trial)
    return OperatorMatrix1D(table.name, kind, _scatter(table, local), kind.symmetric)


def assemble_load(table: ShapeTable, factor: Factor | Callable | None = None,
                  provenance: str = "") -> LoadVector1D:
    """Entries ``int N~_k(x) f(x) dx``; ``factor=None`` integrates the bare shape functions."""
    if factor is None:
        f = np.ones_like(table.points)
    else:
        f = np.asarray(factor(table.points), dtype=float)
        if f.shape != table.points.shape:
            f = np.broadcast_to(f, table.points.shape)
    if not np.all(np.isfinite(f)):
        raise ValueError(f"forcing factor is not finite at quadrature points of {table.name!r}")
    local = np.einsum("eqj,eq->ej", table.N, table.weights * f)
    vals = np.zeros(table.n_nodes)
    np.add.at(vals, table.support, local)
    return LoadVector1D(table.name, vals, provenance)


@dataclass(frozen=True)
class IndexMap:
    """Free node indices of a dimension; maps reduced vectors back to full length."""

    n: int
    free: np.ndarray

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        reduced = np.asarray(reduced)
        out = np.zeros((self.n,) + reduced.shape[1:], dtype=reduced.dtype)
        out[self.free] = reduced
        return out


def apply_dirichlet(obj, constrained):
    """Drop rows (and columns) of constrained nodes; returns ``(reduced, IndexMap)``."""
    if isinstance(obj, OperatorMatrix1D):
        n = obj.shape[0]
    elif isinstance(obj, LoadVector1D):
        n = obj.values.size
    else:
        obj = np.asarray(obj) if not sp.issparse(obj) else obj
        n = obj.shape[0]
    constrained = sorted({int(c) for c in constrained})
    if any(c < 0 or c >= n for c in constrained):
        raise ValueError(f"constrained index out of range for size {n}")
    if len(constrained) == n:
        raise ValueError("cannot constrain every node of a dimension")
    mask = np.ones(n, dtype=bool)
    mask[constrained] = False
    imap = IndexMap(n, np.flatnonzero(mask))
    f = imap.free
    if isinstance(obj, OperatorMatrix1D):
        return OperatorMatrix1D(obj.dim, obj.kind, obj.values[f][:, f].tocsr(), obj.symmetric), imap
    if isinstance(obj, LoadVector1D):
        return LoadVector1D(obj.dim, obj.values[f], obj.provenance), imap
    if sp.issparse(obj):
        return obj.tocsr()[f][:, f], imap
    if obj.ndim == 2 and obj.shape[1] == n:
        return obj[np.ix_(f, f)], imap
    return obj[f], imap
