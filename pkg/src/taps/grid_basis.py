"""1D meshes, Gauss-Legendre rules and patch-interpolation shape functions.

Every independent variable of a problem (space, parameter or time) is
discretized on its own 1D mesh.  The shape functions are built element by
element as

    N~_k(x) = sum_{i in element} N_i(x) W^i_k(x)

where ``N_i`` are the linear hats of the element nodes and ``W^i`` is the
Lagrange interpolant over the ``p + 1`` mesh nodes closest to node ``i``
(the nodal patch).  The construction keeps the Kronecker-delta and
partition-of-unity properties and reproduces polynomials up to degree ``p``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

__all__ = [
    "BasisConfig",
    "BasisError",
    "DimensionSpec",
    "Mesh1D",
    "PatchBasis",
    "QuadratureRule",
    "Role",
    "ShapeTable",
    "build_mesh",
    "eval_basis",
    "gauss_rule",
    "shape_table",
]


class BasisError(ValueError):
    """Raised when a nodal patch cannot be turned into interpolation weights."""


class Role(str, Enum):
    SPATIAL = "spatial"
    PARAMETRIC = "parametric"
    TEMPORAL = "temporal"


@dataclass(frozen=True)
class BasisConfig:
    """Hyperparameters of the convolution patch basis.

    ``a`` is the dilation used to scale patch coordinates; ``None`` means the
    mean element size of the mesh the basis is built on.
    """

    p: int = 1
    s: int | None = None
    a: float | None = None

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"reproducing order p must be >= 1, got {self.p}")
        if self.s is None:
            object.__setattr__(self, "s", self.p)
        if self.s < self.p:
            raise ValueError(f"patch size s={self.s} must be >= p={self.p}")
        if self.a is not None and not self.a > 0:
            raise ValueError(f"dilation a must be > 0, got {self.a}")


@dataclass(frozen=True)
class DimensionSpec:
    """One independent variable with its mesh size, basis and homogeneous Dirichlet nodes.

    Negative entries of ``dirichlet_nodes`` count from the end (``-1`` is the
    last node) and are resolved on construction.
    """

    name: str
    role: Role
    domain: tuple[float, float]
    n_elements: int
    basis: BasisConfig = field(default_factory=BasisConfig)
    dirichlet_nodes: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        lo, hi = (float(v) for v in self.domain)
        object.__setattr__(self, "domain", (lo, hi))
        if not lo < hi:
            raise ValueError(f"dimension {self.name!r}: need lo < hi, got [{lo}, {hi}]")
        if int(self.n_elements) < 1:
            raise ValueError(f"dimension {self.name!r}: n_elements must be >= 1")
        object.__setattr__(self, "n_elements", int(self.n_elements))
        n = self.n_nodes
        resolved = []
        for k in self.dirichlet_nodes:
            k = int(k)
            kk = k + n if k < 0 else k
            if not 0 <= kk < n:
                raise ValueError(f"dimension {self.name!r}: Dirichlet node {k} out of range")
            resolved.append(kk)
        if len(set(resolved)) != len(resolved):
            raise ValueError(f"dimension {self.name!r}: duplicate Dirichlet nodes {resolved}")
        object.__setattr__(self, "dirichlet_nodes", tuple(sorted(resolved)))

    @property
    def n_nodes(self) -> int:
        return self.n_elements + 1

    @property
    def free_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[list(self.dirichlet_nodes)] = False
        return np.flatnonzero(mask)

    def refined(self, n_elements: int, basis: BasisConfig | None = None) -> "DimensionSpec":
        """Same dimension on a different mesh; boundary nodes keep their meaning."""
        old_last = self.n_nodes - 1
        nodes = []
        for k in self.dirichlet_nodes:
            if k == 0:
                nodes.append(0)
            elif k == old_last:
                nodes.append(-1)
            else:
                raise ValueError(f"cannot refine interior Dirichlet node {k} of {self.name!r}")
        return DimensionSpec(self.name, self.role, self.domain, n_elements,
                             basis or self.basis, tuple(nodes))


@dataclass(frozen=True)
class Mesh1D:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a mesh needs at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def elements(self) -> np.ndarray:
        e = np.arange(self.n_elements)
        return np.stack([e, e + 1], axis=1)

    @property
    def lo(self) -> float:
        return float(self.nodes[0])

    @property
    def hi(self) -> float:
        return float(self.nodes[-1])

    def locate(self, x) -> np.ndarray:
        """Element index containing each point (right end belongs to the last element)."""
        x = np.asarray(x, dtype=float)
        span = self.hi - self.lo
        if np.any(x < self.lo - 1e-12 * span) or np.any(x > self.hi + 1e-12 * span):
            raise ValueError(f"point outside mesh domain [{self.lo}, {self.hi}]")
        e = np.searchsorted(self.nodes, x, side="right") - 1
        return np.clip(e, 0, self.n_elements - 1)


def build_mesh(spec: DimensionSpec) -> Mesh1D:
    lo, hi = spec.domain
    return Mesh1D(np.linspace(lo, hi, spec.n_elements + 1))


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray

    @property
    def points_per_element(self) -> int:
        return self.points.size

    @property
    def exact_degree(self) -> int:
        return 2 * self.points.size - 1


def gauss_rule(points_per_element: int) -> QuadratureRule:
    """Gauss-Legendre points and weights on [-1, 1]."""
    q = int(points_per_element)
    if not 1 <= q <= 32:
        raise ValueError(f"points_per_element must be in [1, 32], got {points_per_element}")
    x, w = np.polynomial.legendre.leggauss(q)
    return QuadratureRule(x, w)


class PatchBasis:
    """Shape functions N~_k of one mesh, evaluable at arbitrary points.

    The Lagrange weights of every (element, element node) patch are stored as
    monomial coefficients in the dilated coordinate ``(x - x_i) / a``.
    """

    def __init__(self, mesh: Mesh1D, config: BasisConfig):
        self.mesh = mesh
        self.config = config
        n_el = mesh.n_elements
        if config.p + 1 > mesh.n_nodes:
            raise BasisError(
                f"order p={config.p} needs {config.p + 1} nodes, mesh has {mesh.n_nodes}")
        self.a = float(config.a) if config.a is not None else (mesh.hi - mesh.lo) / n_el
        self._patches = np.empty((n_el, 2, config.p + 1), dtype=int)
        self._coeffs = np.empty((n_el, 2, config.p + 1, config.p + 1))
        for e in range(n_el):
            for side in range(2):
                i = e + side
                patch = self._patch(i, e)
                self._patches[e, side] = patch
                self._coeffs[e, side] = self._lagrange_coeffs(i, patch)
        # union of both patches = the nodes with support on the element
        support = [np.union1d(self._patches[e, 0], self._patches[e, 1]) for e in range(n_el)]
        width = max(s.size for s in support)
        self.support = np.empty((n_el, width), dtype=int)
        self.support_size = np.empty(n_el, dtype=int)
        for e, s in enumerate(support):
            self.support[e, : s.size] = s
            self.support[e, s.size:] = s[-1]
            self.support_size[e] = s.size

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    def _patch(self, i: int, e: int) -> np.ndarray:
        nodes = self.mesh.nodes
        size = self.config.p + 1
        h = np.min(np.diff(nodes))
        lo, hi = max(0, i - size), min(nodes.size, i + size + 1)
        mid = 0.5 * (nodes[e] + nodes[e + 1])
        cand = range(lo, hi)
        # nearest to node i; ties go to the side of the element being integrated
        key = lambda k: (round(abs(nodes[k] - nodes[i]) / h, 8),
                         round(abs(nodes[k] - mid) / h, 8), k)
        return np.sort(np.array(sorted(cand, key=key)[:size]))

    def _lagrange_coeffs(self, i: int, patch: np.ndarray) -> np.ndarray:
        xi = (self.mesh.nodes[patch] - self.mesh.nodes[i]) / self.a
        vander = np.vander(xi, increasing=True)
        if np.linalg.cond(vander) > 1e12:
            raise BasisError(f"singular reproduction system for the patch of node {i}")
        # row r of the result holds the coefficient of xi**r for each patch node
        return np.linalg.inv(vander)

    def local(self, e: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values and x-derivatives of the support functions of element ``e`` at ``x``.

        Returns arrays of shape ``(len(x), support width)`` aligned with
        ``self.support[e]``; padded columns are zero.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        nodes = self.mesh.nodes
        x0, x1 = nodes[e], nodes[e + 1]
        h = x1 - x0
        hats = np.stack([(x1 - x) / h, (x - x0) / h], axis=1)
        dhats = np.array([-1.0 / h, 1.0 / h])
        p = self.config.p
        sup = self.support[e, : self.support_size[e]]
        N = np.zeros((x.size, self.support.shape[1]))
        B = np.zeros_like(N)
        powers = np.arange(p + 1)
        for side in range(2):
            xi = (x - nodes[e + side]) / self.a
            mono = xi[:, None] ** powers
            dmono = np.zeros_like(mono)
            dmono[:, 1:] = powers[1:] * xi[:, None] ** (powers[1:] - 1) / self.a
            W = mono @ self._coeffs[e, side]
            dW = dmono @ self._coeffs[e, side]
            cols = np.searchsorted(sup, self._patches[e, side])
            N[:, cols] += hats[:, side, None] * W
            B[:, cols] += dhats[side] * W + hats[:, side, None] * dW
        return N, B

    def evaluate(self, x, derivative: bool = False) -> np.ndarray:
        """Dense ``(len(x), n_nodes)`` table of N~ (or its derivative) at arbitrary points."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        elems = self.mesh.locate(x)
        out = np.zeros((x.size, self.n_nodes))
        for e in np.unique(elems):
            rows = np.flatnonzero(elems == e)
            N, B = self.local(e, x[rows])
            vals = B if derivative else N
            k = self.support_size[e]
            out[np.ix_(rows, self.support[e, :k])] += vals[:, :k]
        return out


@dataclass(frozen=True, eq=False)
class ShapeTable:
    """Shape-function values and derivatives of one dimension at its quadrature points.

    Per-element storage: ``N[e, q, j]`` is the value at quadrature point ``q``
    of element ``e`` of the function of node ``support[e, j]``.  ``points`` and
    ``weights`` (including the element Jacobian) are shaped ``(n_el, q)``.
    """

    name: str
    basis: PatchBasis
    rule: QuadratureRule
    points: np.ndarray
    weights: np.ndarray
    N: np.ndarray
    B: np.ndarray

    @property
    def mesh(self) -> Mesh1D:
        return self.basis.mesh

    @property
    def n_nodes(self) -> int:
        return self.basis.n_nodes

    @property
    def support(self) -> np.ndarray:
        return self.basis.support

    @property
    def flat_points(self) -> np.ndarray:
        return self.points.ravel()

    @property
    def flat_weights(self) -> np.ndarray:
        return self.weights.ravel()

    def _dense(self, local: np.ndarray) -> np.ndarray:
        n_el, nq, width = local.shape
        out = np.zeros((n_el * nq, self.n_nodes))
        rows = np.repeat(np.arange(n_el * nq), width).reshape(n_el, nq, width)
        cols = np.broadcast_to(self.support[:, None, :], local.shape)
        # padded support columns repeat a real index with a zero value
        np.add.at(out, (rows, cols), local)
        return out

    @cached_property
    def N_dense(self) -> np.ndarray:
        return self._dense(self.N)

    @cached_property
    def B_dense(self) -> np.ndarray:
        return self._dense(self.B)

    @property
    def spans(self) -> np.ndarray:
        """First and last nonzero column for every quadrature point."""
        lo = self.support.min(axis=1)
        hi = self.support.max(axis=1)
        nq = self.points.shape[1]
        return np.stack([np.repeat(lo, nq), np.repeat(hi, nq)], axis=1)

    def values_at(self, x, derivative: bool = False) -> np.ndarray:
        return self.basis.evaluate(x, derivative)

    def interpolate(self, coeffs: np.ndarray) -> np.ndarray:
        """Values of ``N~ @ coeffs`` at every quadrature point, shaped ``(n_el * q, ...)``."""
        return self.N_dense @ coeffs


def eval_basis(mesh: Mesh1D, basis: BasisConfig, rule: QuadratureRule, name: str = "x") -> ShapeTable:
    if rule.exact_degree < 2 * basis.p + 1:
        raise ValueError(
            f"quadrature with {rule.points_per_element} points is not exact to degree {2 * basis.p + 1}")
    pb = PatchBasis(mesh, basis)
    x0 = mesh.nodes[:-1, None]
    h = np.diff(mesh.nodes)[:, None]
    points = x0 + 0.5 * h * (rule.points[None, :] + 1.0)
    weights = 0.5 * h * rule.weights[None, :]
    n_el, nq = points.shape
    width = pb.support.shape[1]
    N = np.empty((n_el, nq, width))
    B = np.empty_like(N)
    for e in range(n_el):
        N[e], B[e] = pb.local(e, points[e])
    for arr in (points, weights, N, B):
        arr.setflags(write=False)
    return ShapeTable(name, pb, rule, points, weights, N, B)


def shape_table(spec: DimensionSpec, points_per_element: int | None = None) -> ShapeTable:
    """Mesh, default quadrature (p + 2 points per element) and basis of one dimension."""
    q = points_per_element or spec.basis.p + 2
    return eval_basis(build_mesh(spec), spec.basis, gauss_rule(q), name=spec.name)
