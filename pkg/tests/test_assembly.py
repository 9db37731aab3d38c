from __future__ import annotations

import numpy as np
import pytest
import sympy as sy

from taps.assembly import (
    MASS, MIXED_BN, MIXED_NB, STIFFNESS, Coordinate, FunctionWeight, IndexMap, Indicator, OperatorKind,
    PreviousSolutionMode, WeightError, apply_dirichlet, assemble_load, assemble_operator, weighted_mass,
    weighted_stiffness,
)
from taps.grid_basis import BasisConfig, DimensionSpec, shape_table
from taps.separable import Monomial, Sin
from taps.td import TDField

X = sy.Symbol("x")


def _table(n, p=1, lo=0.0, hi=1.0):
    return shape_table(DimensionSpec("x", "spatial", (lo, hi), n, BasisConfig(p)))


def _hats(nodes):
    """Piecewise-linear hats as sympy Piecewise expressions."""
    hats = []
    for i, xi in enumerate(nodes):
        pieces = []
        if i > 0:
            a = nodes[i - 1]
            pieces.append(((X - a) / (xi - a), (X >= a) & (X <= xi)))
        if i < len(nodes) - 1:
            b = nodes[i + 1]
            pieces.append(((b - X) / (b - xi), (X >= xi) & (X <= b)))
        pieces.append((0, True))
        hats.append(sy.Piecewise(*pieces))
    return hats


def _symbolic(nodes, kind, weight=1):
    """Exact rational matrix of int test * weight * trial over the mesh, element by element."""
    hats = _hats(nodes)
    n = len(nodes)
    out = sy.zeros(n, n)
    for e in range(n - 1):
        a, b = nodes[e], nodes[e + 1]
        for i in range(n):
            for j in range(n):
                ti = hats[i].diff(X) if kind in ("stiffness", "mixed_bn") else hats[i]
                tj = hats[j].diff(X) if kind in ("stiffness", "mixed_nb") else hats[j]
                w = weight(X, e) if callable(weight) else weight
                integrand = sy.piecewise_fold(ti * w * tj).subs(X, X)
                out[i, j] += sy.integrate(integrand, (X, a, b))
    return np.array(out.evalf(30).tolist(), dtype=float)


@pytest.fixture(scope="module")
def nodes2():
    return [sy.Integer(0), sy.Rational(1, 2), sy.Integer(1)]


@pytest.fixture(scope="module")
def nodes3():
    return [sy.Integer(0), sy.Rational(1, 3), sy.Rational(2, 3), sy.Integer(1)]


@pytest.mark.parametrize("kind,name", [(MASS, "mass"), (STIFFNESS, "stiffness"),
                                       (MIXED_NB, "mixed_nb"), (MIXED_BN, "mixed_bn")])
@pytest.mark.parametrize("n", [2, 3])
def test_p1_operators_match_symbolic_integration(kind, name, n, nodes2, nodes3):
    nodes = nodes2 if n == 2 else nodes3
    ref = _symbolic(nodes, name)
    got = assemble_operator(_table(n), kind).toarray()
    assert np.max(np.abs(got - ref)) <= 1e-14


def test_known_two_element_closed_forms():
    t = _table(2)
    assert np.allclose(assemble_operator(t, STIFFNESS).toarray(),
                       [[2, -2, 0], [-2, 4, -2], [0, -2, 2]], atol=1e-14, rtol=0)
    assert np.allclose(assemble_operator(t, MIXED_NB).toarray(),
                       [[-0.5, 0.5, 0], [-0.5, 0, 0.5], [0, -0.5, 0.5]], atol=1e-14, rtol=0)
    # element mass h/6 [[2, 1], [1, 2]] with h = 1/2
    assert np.allclose(assemble_operator(t, MASS).toarray(),
                       [[1 / 6, 1 / 12, 0], [1 / 12, 1 / 3, 1 / 12], [0, 1 / 12, 1 / 6]], atol=1e-14, rtol=0)


@pytest.mark.parametrize("n", [2, 3])
def test_indicator_weighted_mass_matches_symbolic(n, nodes2, nodes3):
    nodes = nodes2 if n == 2 else nodes3
    hi = nodes[1]
    ref = _symbolic(nodes, "mass", weight=lambda x, e: 1 if e == 0 else 0)
    got = assemble_operator(_table(n), weighted_mass(Indicator(0.0, float(hi)))).toarray()
    assert np.max(np.abs(got - ref)) <= 1e-14


def test_coordinate_weighted_operators_match_symbolic(nodes3):
    ref_m = _symbolic(nodes3, "mass", weight=X)
    ref_k = _symbolic(nodes3, "stiffness", weight=X)
    t = _table(3)
    assert np.max(np.abs(assemble_operator(t, weighted_mass(Coordinate())).toarray() - ref_m)) <= 1e-14
    assert np.max(np.abs(assemble_operator(t, weighted_stiffness(Coordinate())).toarray() - ref_k)) <= 1e-14


def test_mixed_kinds_are_transposes():
    t = _table(5, p=2)
    nb = assemble_operator(t, MIXED_NB).toarray()
    bn = assemble_operator(t, MIXED_BN).toarray()
    assert np.allclose(nb, bn.T, atol=1e-14)
    # int N_i B_j + int B_i N_j = [N_i N_j] at the ends
    s = nb + bn
    expect = np.zeros_like(s)
    expect[0, 0], expect[-1, -1] = -1.0, 1.0
    assert np.allclose(s, expect, atol=1e-13)


def test_indicator_must_align_with_elements():
    with pytest.raises(WeightError):
        assemble_operator(_table(3), weighted_mass(Indicator(0.0, 0.5)))


def test_previous_solution_weight_resolves_factor_column():
    t = _table(4)
    col = np.linspace(1.0, 2.0, 5)
    field = TDField("u", ("x",), {"x": np.column_stack([col, 3 * col])})
    k0 = assemble_operator(t, weighted_mass(PreviousSolutionMode("u", 1)), {"u": field}).toarray()
    ref = assemble_operator(t, weighted_mass(FunctionWeight(Monomial(1)))).toarray()
    # mode 1 is 3 * (1 + x), which the p=1 basis represents exactly
    mass = assemble_operator(t, MASS).toarray()
    assert np.allclose(k0, 3 * (mass + ref), atol=1e-14)
    with pytest.raises(WeightError):
        assemble_operator(t, weighted_mass(PreviousSolutionMode("u", 5)), {"u": field})
    with pytest.raises(WeightError):
        assemble_operator(t, weighted_mass(PreviousSolutionMode("v", 0)), {"u": field})


def test_operator_kind_validation_and_json():
    with pytest.raises(ValueError):
        OperatorKind("laplace")
    with pytest.raises(ValueError):
        OperatorKind("weighted_mass")
    with pytest.raises(ValueError):
        OperatorKind("mass", Coordinate())
    k = weighted_stiffness(Indicator(0.0, 0.5))
    assert OperatorKind.from_json(k.to_json()) == k
    assert OperatorKind.from_json("mixed_nb") == MIXED_NB
    with pytest.raises(ValueError):
        OperatorKind.from_json({"op": "mass", "wieght": None})


def test_load_vectors():
    t = _table(2)
    assert np.allclose(assemble_load(t).values, [0.25, 0.5, 0.25], atol=1e-15)
    assert np.allclose(assemble_load(t, Monomial(1)).values, [1 / 24, 1 / 4, 5 / 24], atol=1e-15)
    fine = _table(40, p=2)
    assert abs(assemble_load(fine, Sin()).values.sum() - 2 / np.pi) <= 1e-8
    with pytest.raises(ValueError):
        assemble_load(t, lambda x: np.full_like(x, np.nan))


def test_symmetry_flags():
    t = _table(4, p=2)
    for kind in (MASS, STIFFNESS, weighted_mass(Coordinate())):
        op = assemble_operator(t, kind)
        assert op.symmetric
        assert np.allclose(op.toarray(), op.toarray().T, atol=1e-15)
    assert not assemble_operator(t, MIXED_NB).symmetric


@pytest.mark.parametrize("p,width", [(1, 3), (2, 5), (3, 7)])
def test_bandwidth(p, width):
    A = assemble_operator(_table(12, p=p), STIFFNESS).toarray()
    rows, cols = np.nonzero(np.abs(A) > 0)
    assert np.max(np.abs(rows - cols)) <= width // 2 + (1 if p > 1 else 0)


def test_apply_dirichlet():
    K = assemble_operator(_table(2), STIFFNESS)
    red, imap = apply_dirichlet(K, {0, 2})
    assert np.allclose(red.toarray(), [[4.0]])
    load = assemble_load(_table(2))
    red_l, _ = apply_dirichlet(load, {0, 2})
    assert np.allclose(red_l.values, [0.5])
    same, imap2 = apply_dirichlet(K, set())
    assert np.allclose(same.toarray(), K.toarray())
    assert np.allclose(imap.expand(np.array([7.0])), [0, 7, 0])
    with pytest.raises(ValueError):
        apply_dirichlet(K, {0, 1, 2})
    with pytest.raises(ValueError):
        apply_dirichlet(K, {5})


def test_index_map_expand_matrix():
    imap = IndexMap(4, np.array([1, 2]))
    out = imap.expand(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert out.shape == (4, 2) and np.allclose(out[[0, 3]], 0)
