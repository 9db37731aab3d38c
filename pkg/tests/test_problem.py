from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from taps.assembly import MIXED_NB, STIFFNESS, Indicator, weighted_mass
from taps.grid_basis import BasisConfig, DimensionSpec
from taps.presets import default_exact, preset
from taps.problem import (
    FieldSpec, ManufactureError, NonlinearTerm, ProblemSpec, SolverParams, WeakFormTerm, manufacture, validate,
)
from taps.separable import Exp, Monomial, SeparableFunction, Sin


def _codes(spec):
    return {d.code for d in validate(spec)}


@pytest.mark.parametrize("name", ["poisson_1d", "heat_1d_spt", "magnetostatics_3d", "elasticity_3d",
                                  "nonlinear_reaction_spt", "heterogeneous_diffusivity(2,2,2)"])
def test_presets_validate_clean(name):
    assert validate(preset(name, n=4)) == []


def test_heat_preset_structure():
    spec = preset("heat_1d_spt", n=4)
    assert spec.dim_names == ("x", "alpha", "t")
    assert len(spec.lhs_terms) == 2
    assert spec.lhs_terms[0].op("t") == MIXED_NB
    assert spec.lhs_terms[1].op("x") == STIFFNESS
    assert spec.sweep_order() == ["x", "alpha", "t"]


def test_heterogeneous_preset_structure():
    spec = preset("heterogeneous_diffusivity(2,2,2)", n=4)
    assert len(spec.dimensions) == 3 + 8 + 1
    assert len(spec.lhs_terms) == 1 + 8 * 3
    assert spec.sweep_order()[:3] == ["x", "y", "z"] and spec.sweep_order()[-1] == "t"
    assert spec.solver_params.M == 2
    with pytest.raises(ValueError):
        preset("heterogeneous_diffusivity(3,1,1)", n=4)
    with pytest.raises(ValueError):
        preset("no_such_problem")


def test_elasticity_cross_terms():
    spec = preset("elasticity_3d", n=4)
    assert sum(t.coupling for t in spec.lhs_terms) == 6
    decoupled = preset("elasticity_3d", n=4, lam=-1.0, mu=1.0)
    assert not any(t.coupling for t in decoupled.lhs_terms)


def test_nonlinear_preset():
    spec = preset("nonlinear_reaction_spt", n=4, spatial=1)
    assert spec.nonlinear == (NonlinearTerm("u", 1.0),)
    with pytest.raises(ValueError):
        NonlinearTerm("u", 1.0, "cubic")


def _base():
    return preset("poisson_1d", n=4)


def test_validate_reports_unknown_field_and_dimension():
    spec = _base()
    bad = replace(spec, lhs_terms=spec.lhs_terms + (WeakFormTerm(1.0, "u", "q", {"y": STIFFNESS}),))
    codes = _codes(bad)
    assert {"unknown-field", "unknown-dimension"} <= codes
    msgs = [str(d) for d in validate(bad)]
    assert any("lhs_terms[1]" in m for m in msgs)


def test_validate_reports_missing_coercive_term():
    spec = _base()
    bad = replace(spec, lhs_terms=(WeakFormTerm(1.0, "u", "u", {"x": MIXED_NB}),))
    assert "coercivity" in _codes(bad)


def test_validate_reports_misaligned_indicator():
    spec = _base()
    bad = replace(spec, lhs_terms=spec.lhs_terms + (WeakFormTerm(1.0, "u", "u", {"x": weighted_mass(Indicator(0.0, 0.3))}),))
    assert "indicator-alignment" in _codes(bad)


def test_validate_reports_bad_forcing_and_duplicates():
    spec = _base()
    bad = replace(spec, rhs={"u": SeparableFunction.product(1.0, y=Sin()), "v": SeparableFunction.product(1.0)})
    assert {"unknown-dimension", "unknown-field"} <= _codes(bad)
    dup = replace(spec, dimensions=spec.dimensions * 2)
    assert "duplicate-dimension" in _codes(dup)
    empty = replace(spec, fields=(), lhs_terms=(), rhs={})
    assert "no-fields" in _codes(empty)


def test_solver_params_validation():
    with pytest.raises(ValueError):
        SolverParams(M=0)
    with pytest.raises(ValueError):
        SolverParams(tol_subspace=0.0)
    with pytest.raises(ValueError):
        SolverParams(linear_solver="gauss")


def test_refined_changes_only_selected_dims():
    spec = preset("heat_1d_spt", n=4)
    r = spec.refined({"x": 8, "t": 8}, dims={"x", "t"})
    assert [d.n_elements for d in r.dimensions] == [8, 4, 8]
    q = spec.refined(6, p=2)
    assert all(d.n_elements == 6 and d.basis.p == 2 for d in q.dimensions)
    assert q.dim("t").dirichlet_nodes == (0,)


def test_manufacture_poisson_quadratic():
    spec = manufacture(_base(), {"u": SeparableFunction.product(1.0, x=Monomial(1)) +
                                 SeparableFunction.product(-1.0, x=Monomial(2))})
    x = np.linspace(0, 1, 11)
    assert np.allclose(spec.rhs["u"].evaluate({"x": x}), 2.0, atol=1e-13)


def test_manufacture_heat_exponential():
    spec = preset("heat_1d_spt", n=4)
    exact = {"u": SeparableFunction.product(1.0, x=Sin(), t=Exp(-1.0))}
    with pytest.raises(ManufactureError):
        manufacture(spec, exact)
    m = manufacture(spec, exact, check_boundary=False)
    rng = np.random.default_rng(0)
    pt = {"x": rng.uniform(0, 1, 20), "alpha": rng.uniform(1, 2, 20), "t": rng.uniform(0, 1, 20)}
    expect = (-1 + pt["alpha"] * np.pi ** 2) * np.sin(np.pi * pt["x"]) * np.exp(-pt["t"])
    assert np.allclose(m.rhs["u"].evaluate(pt), expect, rtol=1e-13, atol=1e-13)


def test_manufacture_nonlinear_adds_square():
    spec = preset("nonlinear_reaction_spt", n=4, spatial=1)
    exact = default_exact("nonlinear_reaction_spt", spec)
    m = manufacture(spec, exact)
    rng = np.random.default_rng(1)
    pt = {"x": rng.uniform(0, 1, 20), "alpha": rng.uniform(1, 2, 20), "t": rng.uniform(0, 1, 20)}
    x, a, t = pt["x"], pt["alpha"], pt["t"]
    u = a * np.sin(np.pi * t / 2) * np.sin(np.pi * x)
    ut = a * np.pi / 2 * np.cos(np.pi * t / 2) * np.sin(np.pi * x)
    expect = ut + a * np.pi ** 2 * u + u ** 2
    assert np.allclose(m.rhs["u"].evaluate(pt), expect, rtol=1e-12, atol=1e-12)


def test_manufacture_rejects_indicator_weights():
    spec = preset("heterogeneous_diffusivity(1,1,1)", n=2)
    with pytest.raises(ManufactureError):
        manufacture(spec, {"u": SeparableFunction.product(1.0, x=Sin(), y=Sin(), z=Sin(), t=Monomial(1))})


def test_default_exact_vanishes_on_boundaries():
    for name in ("poisson_1d", "heat_1d_spt", "magnetostatics_3d", "elasticity_3d", "nonlinear_reaction_spt"):
        spec = preset(name, n=4)
        manufacture(spec, default_exact(name, spec))
    assert default_exact("heterogeneous_diffusivity(2,2,2)", preset("heterogeneous_diffusivity", n=4)) is None


def test_term_serialization_shape():
    d = preset("heat_1d_spt", n=2).lhs_terms[0].to_dict()
    assert d["ops"] == {"t": "mixed_nb"} and d["test"] == d["trial"] == "u"


def test_custom_problem_declaration():
    dims = (DimensionSpec("x", "spatial", (0, 2), 4, BasisConfig(2), (0, -1)),)
    spec = ProblemSpec("custom", dims, (FieldSpec("u", ("x",)),),
                       (WeakFormTerm(1.0, "u", "u", {"x": STIFFNESS}), WeakFormTerm(3.0, "u", "u")),
                       {"u": SeparableFunction.product(1.0)})
    assert validate(spec) == []
