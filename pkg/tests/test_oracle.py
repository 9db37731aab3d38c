from __future__ import annotations

import numpy as np
import pytest

from taps.oracle import (
    OracleTooLarge, banded_galerkin_solve, fix_parameters, full_l2_distance, full_l2_norm, oracle_full_solve,
    td_at_parameters,
)
from taps.presets import default_exact, preset
from taps.problem import SolverParams, manufacture
from taps.solver import Discretization, solve
from taps.td import TDField, evaluate, l2_norm


def _tab(disc, dims):
    return [disc.tables[d] for d in dims]


def test_poisson_oracles_agree_and_are_nodally_exact():
    spec = preset("poisson_1d", n=8)
    nodes = np.linspace(0, 1, 9)
    full = oracle_full_solve(spec)["u"]
    banded = banded_galerkin_solve(spec)
    assert np.allclose(full, nodes * (1 - nodes), atol=1e-14)
    assert np.allclose(banded, full, atol=1e-15)


def test_banded_solve_rejects_multidimensional_problems():
    with pytest.raises(ValueError):
        banded_galerkin_solve(preset("heat_1d_spt", n=2))


def test_nonlinear_and_oversized_problems_are_refused():
    with pytest.raises(ValueError):
        oracle_full_solve(preset("nonlinear_reaction_spt", n=2, spatial=1))
    with pytest.raises(OracleTooLarge):
        oracle_full_solve(preset("heat_1d_spt", n=8), max_unknowns=100)


def test_time_diagonalized_path_matches_direct():
    spec = preset("heat_1d_spt", n=6)
    direct = oracle_full_solve(spec)["u"]
    diag = oracle_full_solve(spec, direct_limit=0)["u"]
    assert np.max(np.abs(direct - diag)) <= 1e-12 * np.max(np.abs(direct))


def test_full_norm_matches_separated_norm():
    spec = preset("heat_1d_spt", n=4, p=2)
    disc = Discretization(spec)
    rng = np.random.default_rng(0)
    f = TDField("u", spec.dim_names, {d: rng.normal(size=(t.n_nodes, 3)) for d, t in disc.tables.items()})
    tabs = _tab(disc, f.dims)
    assert np.isclose(full_l2_norm(f.to_full(), tabs), l2_norm(f, disc.tables), rtol=1e-12)
    assert full_l2_distance(f.to_full(), tabs, f.to_full(), tabs, tabs) == 0.0


def test_full_distance_across_grids():
    coarse = Discretization(preset("poisson_1d", n=2)).tables["x"]
    fine = Discretization(preset("poisson_1d", n=4)).tables["x"]
    a = np.array([0.0, 1.0, 0.0])
    b = np.array([0.0, 0.5, 1.0, 0.5, 0.0])
    # the same hat on both grids
    assert full_l2_distance(a, [coarse], b, [fine], [fine]) <= 1e-15
    assert np.isclose(full_l2_norm(a, [coarse]), np.sqrt(1 / 3), rtol=1e-14)


@pytest.mark.parametrize("name,n,M", [("magnetostatics_3d", 4, 3), ("heat_1d_spt", 5, 4)])
def test_converged_separated_solution_matches_full_order(name, n, M):
    spec = preset(name, n=n, M=M).with_params(tol_subspace=1e-9, max_sweeps=500)
    disc = Discretization(spec)
    state, report = solve(spec, disc=disc)
    ref = oracle_full_solve(spec)
    for f in spec.fields:
        tabs = _tab(disc, f.dims)
        dist = full_l2_distance(state[f.name].to_full(), tabs, ref[f.name], tabs, tabs)
        assert dist <= 1e-3 * full_l2_norm(ref[f.name], tabs)


def test_coupled_elasticity_matches_full_order():
    spec = preset("elasticity_3d", n=3, M=4)
    exact = default_exact("elasticity_3d", spec)
    mspec = manufacture(spec, exact).with_params(tol_subspace=1e-8, max_sweeps=400)
    disc = Discretization(mspec)
    state, report = solve(mspec, disc=disc)
    ref = oracle_full_solve(mspec)
    assert report.converged
    for f in mspec.fields:
        tabs = _tab(disc, f.dims)
        dist = full_l2_distance(state[f.name].to_full(), tabs, ref[f.name], tabs, tabs)
        assert dist <= 1e-3 * full_l2_norm(ref[f.name], tabs)


def test_fix_parameters_collapses_weights_and_forcing():
    spec = preset("heat_1d_spt", n=4)
    fixed = fix_parameters(spec, {"alpha": 1.5})
    assert fixed.dim_names == ("x", "t")
    assert fixed.fields[0].dims == ("x", "t")
    assert fixed.lhs_terms[1].coefficient == 1.5
    assert fixed.lhs_terms[0].coefficient == 1.0
    with pytest.raises(ValueError):
        fix_parameters(spec, {"x": 0.5})


def test_fixed_parameter_problem_matches_manufactured_slice():
    spec = preset("heat_1d_spt", n=16)
    exact = default_exact("heat_1d_spt", spec)
    mspec = manufacture(spec, exact)
    fixed = fix_parameters(mspec, {"alpha": 1.3})
    u = oracle_full_solve(fixed)["u"]
    disc = Discretization(fixed)
    x = np.linspace(0, 1, 17)
    ref = np.outer(np.sin(np.pi * x), 1 - np.exp(-x))
    assert np.max(np.abs(u - ref)) <= 5e-3
    assert full_l2_norm(u, _tab(disc, ("x", "t"))) > 0.1


def test_td_at_parameters_matches_pointwise_evaluation():
    spec = preset("heat_1d_spt", n=4, p=2)
    disc = Discretization(spec)
    rng = np.random.default_rng(1)
    f = TDField("u", spec.dim_names, {d: rng.normal(size=(t.n_nodes, 2)) for d, t in disc.tables.items()})
    sliced = td_at_parameters(f, disc.tables, {"alpha": 1.37})
    pts = {"x": rng.uniform(0, 1, 20), "t": rng.uniform(0, 1, 20)}
    full_pts = dict(pts, alpha=np.full(20, 1.37))
    assert np.allclose(evaluate(sliced, disc.tables, pts), evaluate(f, disc.tables, full_pts), atol=1e-13)


def test_solver_params_do_not_affect_oracle():
    a = oracle_full_solve(preset("heat_1d_spt", n=3))["u"]
    b = oracle_full_solve(preset("heat_1d_spt", n=3).with_params(**SolverParams(M=1).__dict__))["u"]
    assert np.array_equal(a, b)
