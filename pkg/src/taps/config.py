"""Run configuration files and JSON (de)serialization of problems."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .assembly import OperatorKind
from .factors_io import dimension_from_dict, dimension_to_dict
from .presets import default_exact, preset
from .problem import FieldSpec, NonlinearTerm, ProblemSpec, WeakFormTerm
from .separable import SeparableFunction

__all__ = [
    "ConfigError", "RunConfig", "build_problem", "exact_from_config", "load_config",
    "parse_config", "problem_from_dict", "problem_to_dict",
]


class ConfigError(ValueError):
    pass


def problem_to_dict(spec: ProblemSpec) -> dict:
    return {
        "name": spec.name,
        "dimensions": [dimension_to_dict(d) for d in spec.dimensions],
        "fields": [{"name": f.name, "dims": list(f.dims)} for f in spec.fields],
        "lhs_terms": [t.to_dict() for t in spec.lhs_terms],
        "rhs": {k: v.to_dict() for k, v in spec.rhs.items()},
        "nonlinear": [{"field": n.field, "coefficient": n.coefficient, "kind": n.kind} for n in spec.nonlinear],
    }


_PROBLEM_KEYS = {"name", "dimensions", "fields", "lhs_terms", "rhs", "nonlinear"}
_TERM_KEYS = {"coefficient", "test", "trial", "ops", "label"}


def problem_from_dict(d: dict) -> ProblemSpec:
    extra = set(d) - _PROBLEM_KEYS
    if extra:
        raise ConfigError(f"problem: unknown key {sorted(extra)[0]!r}")
    for k, t in enumerate(d.get("lhs_terms", ())):
        extra = set(t) - _TERM_KEYS
        if extra:
            raise ConfigError(f"problem.lhs_terms.{k}: unknown key {sorted(extra)[0]!r}")
    try:
        dims = tuple(dimension_from_dict(x) for x in d["dimensions"])
        fields = tuple(FieldSpec(f["name"], tuple(f["dims"])) for f in d["fields"])
        terms = tuple(
            WeakFormTerm(float(t.get("coefficient", 1.0)), t["test"], t.get("trial", t["test"]),
                         {k: OperatorKind.from_json(v) for k, v in t.get("ops", {}).items()},
                         t.get("label", ""))
            for t in d["lhs_terms"])
        rhs = {k: SeparableFunction.from_dict(v) for k, v in d.get("rhs", {}).items()}
        nl = tuple(NonlinearTerm(n["field"], float(n.get("coefficient", 1.0)), n.get("kind", "quadratic_reaction"))
                   for n in d.get("nonlinear", ()))
    except KeyError as exc:
        raise ConfigError(f"problem: missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"problem: {exc}") from None
    return ProblemSpec(d.get("name", "inline"), dims, fields, terms, rhs, nl)


class SolverBlock(BaseModel):
    """Overrides of the problem's solver settings; unset keys keep the problem's values."""

    model_config = ConfigDict(extra="forbid")
    tol_subspace: float | None = None
    max_sweeps: int | None = None
    tol_nonlinear: float | None = None
    max_nonlinear: int | None = None
    linear_solver: Literal["direct_sparse", "conjugate_gradient"] | None = None
    cg_tol: float | None = None
    cg_max_iter: int | None = None


class Hyper(BaseModel):
    model_config = ConfigDict(extra="forbid")
    p: int = 1
    s: int | None = None
    a: float | None = None


class StudyBlock(BaseModel):
    model_config = ConfigDict(extra="forbid")
    levels: list[int]
    hyperparameters: list[Hyper] = Field(default_factory=lambda: [Hyper()])
    M: int | list[int] | None = None
    dims: list[str] | None = None

    @field_validator("levels")
    @classmethod
    def _levels(cls, v):
        if len(v) < 2:
            raise ValueError("a study needs >= 2 levels")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("levels must be strictly increasing")
        return v


class PresetRef(BaseModel):
    model_config = ConfigDict(extra="forbid")
    preset: str
    options: dict[str, Any] = Field(default_factory=dict)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    mode: Literal["solve", "study", "oracle-compare", "validate"]
    problem: Union[str, PresetRef, dict[str, Any]]
    n: int | None = None
    p: int | None = None
    M: int | None = None
    solver: SolverBlock = Field(default_factory=SolverBlock)
    study: StudyBlock | None = None
    exact: dict[str, Any] | None = None
    out: str = "taps-out"
    seed: int = 0
    threads: int | None = None
    binary: bool = True

    @model_validator(mode="after")
    def _study_needs_block(self):
        if self.mode == "study" and self.study is None:
            raise ValueError("mode 'study' needs a 'study' block with >= 2 levels")
        return self


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for e in exc.errors():
        loc = ".".join(str(x) for x in e["loc"])
        if e["type"] == "extra_forbidden":
            parts.append(f"unknown key {loc!r}")
        else:
            parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(data)


def build_problem(cfg: RunConfig) -> tuple[ProblemSpec, str]:
    """Problem spec with config-level n/p/M, solver settings and seed applied; also the preset label."""
    kw: dict[str, Any] = {}
    for key in ("n", "p", "M"):
        if getattr(cfg, key) is not None:
            kw[key] = getattr(cfg, key)
    try:
        if isinstance(cfg.problem, str):
            label = cfg.problem
            spec = preset(cfg.problem, **kw)
        elif isinstance(cfg.problem, PresetRef):
            label = cfg.problem.preset
            spec = preset(cfg.problem.preset, **{**cfg.problem.options, **kw})
    except TypeError as exc:
        raise ConfigError(f"problem options: {exc}") from None
    if isinstance(cfg.problem, dict):
        spec = problem_from_dict(cfg.problem)
        label = spec.name
        if cfg.n is not None or cfg.p is not None:
            spec = spec.refined(cfg.n if cfg.n is not None else {d.name: d.n_elements for d in spec.dimensions},
                                p=cfg.p)
    overrides = cfg.solver.model_dump(exclude_none=True)
    if cfg.M is not None:
        overrides["M"] = cfg.M
    try:
        return spec.with_params(seed=cfg.seed, **overrides), label
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None


def exact_from_config(cfg: RunConfig, spec: ProblemSpec, label: str) -> dict[str, SeparableFunction]:
    if cfg.exact is not None:
        return {k: SeparableFunction.from_dict(v) for k, v in cfg.exact.items()}
    ex = default_exact(label, spec)
    if ex is None:
        raise ConfigError(f"no default manufactured solution for {label!r}; give an 'exact' block")
    return ex
