"""Ready-made problems: transient heat, magnetostatics, elasticity, reaction-diffusion,
heterogeneous diffusivity, plus a 1D Poisson toy."""
from __future__ import annotations

from itertools import product as iproduct

import numpy as np

from .assembly import MIXED_BN, MIXED_NB, STIFFNESS, Coordinate, Indicator, weighted_mass, weighted_stiffness
from .grid_basis import BasisConfig, DimensionSpec
from .problem import FieldSpec, NonlinearTerm, ProblemSpec, SolverParams, WeakFormTerm
from .separable import Exp, Gaussian, Monomial, SeparableFunction, Sin

__all__ = ["MU0", "PRESETS", "default_exact", "preset"]

MU0 = 4e-7 * np.pi


def _space(name, n, p, lo=0.0, hi=1.0):
    return DimensionSpec(name, "spatial", (lo, hi), n, BasisConfig(p), (0, -1))


def _time(n, p, hi=1.0):
    return DimensionSpec("t", "temporal", (0.0, hi), n, BasisConfig(p), (0,))


def _param(name, n, p, lo, hi):
    return DimensionSpec(name, "parametric", (lo, hi), n, BasisConfig(p), ())


def poisson_1d(n=8, p=1, M=1):
    """-u'' = 2 on [0, 1], u(0) = u(1) = 0; exact solution x(1 - x)."""
    dims = (_space("x", n, p),)
    terms = (WeakFormTerm(1.0, "u", "u", {"x": STIFFNESS}, "diffusion"),)
    rhs = {"u": SeparableFunction.product(2.0)}
    return ProblemSpec("poisson_1d", dims, (FieldSpec("u", ("x",)),), terms, rhs,
                       solver_params=SolverParams(M=M))


def heat_1d_spt(n=8, p=1, M=4, alpha=(1.0, 2.0)):
    """u_t - (alpha u_x)_x = f on x in [0,1], alpha a parameter, t in [0,1]."""
    dims = (_space("x", n, p), _param("alpha", n, p, *alpha), _time(n, p))
    names = tuple(d.name for d in dims)
    terms = (
        WeakFormTerm(1.0, "u", "u", {"t": MIXED_NB}, "time derivative"),
        WeakFormTerm(1.0, "u", "u", {"x": STIFFNESS, "alpha": weighted_mass(Coordinate())}, "diffusion"),
    )
    rhs = {"u": SeparableFunction.product(1.0)}
    return ProblemSpec("heat_1d_spt", dims, (FieldSpec("u", names),), terms, rhs,
                       solver_params=SolverParams(M=M))


def _laplacian(field, dims, coef=1.0):
    return [WeakFormTerm(coef, field, field, {d: STIFFNESS}, f"laplacian {d}") for d in dims]


def magnetostatics_3d(n=8, p=1, M=4, components=("A_x", "A_y", "A_z"), current=None):
    """-laplace(A_i) = mu0 J_i, one decoupled scalar field per component."""
    dims = tuple(_space(s, n, p) for s in "xyz")
    names = ("x", "y", "z")
    terms = []
    for c in components:
        terms += _laplacian(c, names)
    J = current or {c: SeparableFunction.product(1.0) for c in components}
    rhs = {c: J[c].scaled(MU0) for c in components}
    fields = tuple(FieldSpec(c, names) for c in components)
    return ProblemSpec("magnetostatics_3d", dims, fields, tuple(terms), rhs,
                       solver_params=SolverParams(M=M))


def elasticity_3d(n=8, p=1, M=4, lam=1.0, mu=1.0):
    """-mu laplace(u) - (lam + mu) grad(div u) = f with clamped faces."""
    dims = tuple(_space(s, n, p) for s in "xyz")
    names = ("x", "y", "z")
    fields = ("u", "v", "w")
    terms = []
    for f, own in zip(fields, names):
        terms += _laplacian(f, names, mu)
        if lam + mu != 0.0:
            terms.append(WeakFormTerm(lam + mu, f, f, {own: STIFFNESS}, f"dilatation {own}{own}"))
            for g, other in zip(fields, names):
                if g == f:
                    continue
                # int d(delta f)/d own * d g / d other
                ops = {own: MIXED_BN, other: MIXED_NB}
                terms.append(WeakFormTerm(lam + mu, f, g, ops, f"dilatation {own}{other}"))
    rhs = {f: SeparableFunction.product(1.0) for f in fields}
    return ProblemSpec("elasticity_3d", dims, tuple(FieldSpec(f, names) for f in fields),
                       tuple(terms), rhs, solver_params=SolverParams(M=M))


def nonlinear_reaction_spt(n=8, p=1, M=4, spatial=3, alpha=(1.0, 2.0)):
    """u_t - div(alpha grad u) + u^2 = f with alpha a parameter."""
    space = "xyz"[:spatial]
    dims = tuple(_space(s, n, p) for s in space) + (_param("alpha", n, p, *alpha), _time(n, p))
    names = tuple(d.name for d in dims)
    terms = [WeakFormTerm(1.0, "u", "u", {"t": MIXED_NB}, "time derivative")]
    terms += [WeakFormTerm(1.0, "u", "u", {s: STIFFNESS, "alpha": weighted_mass(Coordinate())}, f"diffusion {s}")
              for s in space]
    rhs = {"u": SeparableFunction.product(1.0)}
    return ProblemSpec("nonlinear_reaction_spt", dims, (FieldSpec("u", names),), tuple(terms), rhs,
                       nonlinear=(NonlinearTerm("u", 1.0),), solver_params=SolverParams(M=M))


def heterogeneous_diffusivity(Dx=2, Dy=2, Dz=2, n=8, p=1, M=2, alpha=(1.0, 2.0),
                              radius=0.25, center=0.0, n_param=None):
    """u_t - div(k grad u) = f with k = sum_r alpha_r I_r(x, y, z) on a block partition.

    Each subdomain diffusivity alpha_r is a parametric dimension.  Block
    boundaries must fall on element boundaries, so ``n`` has to be divisible
    by every subdomain count.
    """
    counts = {"x": Dx, "y": Dy, "z": Dz}
    for s, c in counts.items():
        if c < 1:
            raise ValueError(f"subdomain count along {s} must be >= 1, got {c}")
        if n % c:
            raise ValueError(f"n={n} is not divisible by the {c} subdomains along {s}")
    R = Dx * Dy * Dz
    n_param = n_param or n
    space = [_space(s, n, p) for s in "xyz"]
    params = [_param(f"alpha{r + 1}", n_param, p, *alpha) for r in range(R)]
    dims = tuple(space) + tuple(params) + (_time(n, p),)
    names = tuple(d.name for d in dims)
    terms = [WeakFormTerm(1.0, "u", "u", {"t": MIXED_NB}, "time derivative")]
    blocks = list(iproduct(range(Dx), range(Dy), range(Dz)))
    for r, (i, j, k) in enumerate(blocks):
        ind = {s: Indicator(b / counts[s], (b + 1) / counts[s]) for s, b in zip("xyz", (i, j, k))}
        for s in "xyz":
            ops = {q: (weighted_stiffness(ind[q]) if q == s else weighted_mass(ind[q])) for q in "xyz"}
            ops[f"alpha{r + 1}"] = weighted_mass(Coordinate())
            terms.append(WeakFormTerm(1.0, "u", "u", ops, f"diffusion block {r + 1} {s}"))
    f = SeparableFunction.product(1.0, x=Gaussian(center, radius), z=Gaussian(center, radius))
    return ProblemSpec(f"heterogeneous_diffusivity({Dx},{Dy},{Dz})", dims, (FieldSpec("u", names),),
                       tuple(terms), {"u": f}, solver_params=SolverParams(M=M, max_sweeps=1000))


PRESETS = {
    "poisson_1d": poisson_1d,
    "heat_1d_spt": heat_1d_spt,
    "magnetostatics_3d": magnetostatics_3d,
    "elasticity_3d": elasticity_3d,
    "nonlinear_reaction_spt": nonlinear_reaction_spt,
    "heterogeneous_diffusivity": heterogeneous_diffusivity,
}


def preset(name: str, **kwargs) -> ProblemSpec:
    """Build a preset problem; ``heterogeneous_diffusivity(2,2,2)`` style names are accepted."""
    if "(" in name and name.endswith(")"):
        base, args = name[:-1].split("(", 1)
        counts = [int(a) for a in args.split(",")]
        if base != "heterogeneous_diffusivity" or len(counts) != 3:
            raise ValueError(f"unknown preset {name!r}")
        kwargs.update(Dx=counts[0], Dy=counts[1], Dz=counts[2])
        name = base
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**kwargs)


def _spatial_sines(spec: ProblemSpec, freqs=None):
    freqs = freqs or {}
    return {d.name: Sin(np.pi * freqs.get(d.name, 1)) for d in spec.dimensions if d.role.value == "spatial"}


def default_exact(name: str, spec: ProblemSpec) -> dict[str, SeparableFunction] | None:
    """Manufactured solutions vanishing on the constrained boundaries of each preset.

    Returns None for presets whose operators cannot be manufactured
    (indicator-weighted diffusivity).
    """
    base = name.split("(")[0]
    if base == "poisson_1d":
        return {"u": SeparableFunction.product(1.0, x=Sin())}
    if base == "heat_1d_spt":
        # 1 - exp(-t) keeps the exponential decay while meeting u(t=0) = 0
        return {"u": SeparableFunction.product(1.0, x=Sin()) + SeparableFunction.product(-1.0, x=Sin(), t=Exp(-1.0))}
    if base == "magnetostatics_3d":
        return {f.name: SeparableFunction.product(1.0 + k, **_spatial_sines(spec)) for k, f in enumerate(spec.fields)}
    if base == "elasticity_3d":
        freqs = [{}, {"y": 2}, {"z": 2}]
        return {f.name: SeparableFunction.product(1.0, **_spatial_sines(spec, fr)) for f, fr in zip(spec.fields, freqs)}
    if base == "nonlinear_reaction_spt":
        return {"u": SeparableFunction.product(1.0, alpha=Monomial(1), t=Sin(np.pi / 2), **_spatial_sines(spec))}
    return None
