"""Closed-form univariate factors with analytic derivatives, and sums of their products.

A :class:`SeparableFunction` is ``sum_r c_r prod_d g_{r,d}(x_d)``; dimensions a
term does not mention contribute a factor of one.  Factors serialize to plain
dicts so they can live in JSON configs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial
from typing import Mapping

import numpy as np
from numpy.polynomial import hermite

__all__ = [
    "Constant", "Cos", "Derivative", "Exp", "Factor", "Gaussian", "Monomial",
    "Product", "SeparableFunction", "SeparableTerm", "Sin", "factor_from_dict",
]


class Factor:
    """Univariate closed-form function; ``deriv(x, k)`` is the k-th derivative."""

    kind: str = ""

    def deriv(self, x, k: int = 0) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x) -> np.ndarray:
        return self.deriv(x, 0)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(Factor):
    value: float = 1.0
    kind = "constant"

    def deriv(self, x, k=0):
        x = np.asarray(x, dtype=float)
        return np.full_like(x, self.value if k == 0 else 0.0)

    def to_dict(self):
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True)
class Monomial(Factor):
    power: int = 1
    kind = "monomial"

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("monomial power must be >= 0")

    def deriv(self, x, k=0):
        x = np.asarray(x, dtype=float)
        if k > self.power:
            return np.zeros_like(x)
        scale = factorial(self.power) / factorial(self.power - k)
        return scale * x ** (self.power - k)

    def to_dict(self):
        return {"kind": self.kind, "power": self.power}


@dataclass(frozen=True)
class Sin(Factor):
    """sin(omega x + phase)"""

    omega: float = np.pi
    phase: float = 0.0
    kind = "sin"

    def deriv(self, x, k=0):
        x = np.asarray(x, dtype=float)
        return self.omega ** k * np.sin(self.omega * x + self.phase + 0.5 * k * np.pi)

    def to_dict(self):
        return {"kind": self.kind, "omega": self.omega, "phase": self.phase}


@dataclass(frozen=True)
class Cos(Factor):
    omega: float = np.pi
    phase: float = 0.0
    kind = "cos"

    def deriv(self, x, k=0):
        x = np.asarray(x, dtype=float)
        return self.omega ** k * np.cos(self.omega * x + self.phase + 0.5 * k * np.pi)

    def to_dict(self):
        return {"kind": self.kind, "omega": self.omega, "phase": self.phase}


@dataclass(frozen=True)
class Exp(Factor):
    rate: float = 1.0
    kind = "exp"

    def deriv(self, x, k=0):
        x = np.asarray(x, dtype=float)
        return self.rate ** k * np.exp(self.rate * x)

    def to_dict(self):
        return {"kind": self.kind, "rate": self.rate}


@dataclass(frozen=True)
class Gaussian(Factor):
    """exp(-((x - center) / radius)**2)"""

    center: float = 0.0
    radius: float = 1.0
    kind = "gaussian"

    def deriv(self, x, k=0):
        z = (np.asarray(x, dtype=float) - self.center) / self.radius
        herm = hermite.hermval(z, [0] * k + [1])
        return (-1) ** k * herm * np.exp(-z * z) / self.radius ** k

    def to_dict(self):
        return {"kind": self.kind, "center": self.center, "radius": self.radius}


@dataclass(frozen=True)
class Product(Factor):
    factors: tuple[Factor, ...]
    kind = "product"

    def deriv(self, x, k=0):
        x = np.asarray(x, dtype=float)
        # Leibniz rule, folded left to right
        derivs = [self.factors[0].deriv(x, j) for j in range(k + 1)]
        for g in self.factors[1:]:
            gd = [g.deriv(x, j) for j in range(k + 1)]
            derivs = [sum(comb(n, j) * derivs[j] * gd[n - j] for j in range(n + 1))
                      for n in range(k + 1)]
        return derivs[k]

    def to_dict(self):
        return {"kind": self.kind, "factors": [f.to_dict() for f in self.factors]}


@dataclass(frozen=True)
class Derivative(Factor):
    of: Factor
    order: int = 1
    kind = "derivative"

    def deriv(self, x, k=0):
        return self.of.deriv(x, k + self.order)

    def to_dict(self):
        return {"kind": self.kind, "order": self.order, "of": self.of.to_dict()}


_KINDS = {c.kind: c for c in (Constant, Monomial, Sin, Cos, Exp, Gaussian)}


def factor_from_dict(d: Mapping | float | int) -> Factor:
    if isinstance(d, (int, float)):
        return Constant(float(d))
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "product":
        return Product(tuple(factor_from_dict(f) for f in d["factors"]))
    if kind == "derivative":
        return Derivative(factor_from_dict(d["of"]), int(d.get("order", 1)))
    if kind not in _KINDS:
        raise ValueError(f"unknown factor kind {kind!r}")
    try:
        return _KINDS[kind](**d)
    except TypeError as exc:
        raise ValueError(f"bad parameters for factor {kind!r}: {exc}") from None


def _multiply(f: Factor | None, g: Factor | None) -> Factor | None:
    if f is None:
        return g
    if g is None:
        return f
    parts = []
    for h in (f, g):
        parts.extend(h.factors if isinstance(h, Product) else (h,))
    return Product(tuple(parts))


@dataclass(frozen=True)
class SeparableTerm:
    coefficient: float
    factors: Mapping[str, Factor] = field(default_factory=dict)

    def factor(self, dim: str) -> Factor | None:
        return self.factors.get(dim)

    def evaluate(self, point: Mapping[str, np.ndarray]) -> np.ndarray:
        val = self.coefficient
        for dim, f in self.factors.items():
            val = val * f(point[dim])
        return np.asarray(val, dtype=float)

    def to_dict(self):
        return {"coefficient": self.coefficient,
                "factors": {d: f.to_dict() for d, f in self.factors.items()}}


@dataclass(frozen=True)
class SeparableFunction:
    terms: tuple[SeparableTerm, ...] = ()

    @classmethod
    def product(cls, coefficient: float = 1.0, **factors: Factor) -> "SeparableFunction":
        return cls((SeparableTerm(float(coefficient), dict(factors)),))

    @classmethod
    def zero(cls) -> "SeparableFunction":
        return cls(())

    @property
    def dims(self) -> set[str]:
        return {d for t in self.terms for d in t.factors}

    def __len__(self):
        return len(self.terms)

    def __add__(self, other: "SeparableFunction") -> "SeparableFunction":
        return SeparableFunction(self.terms + other.terms)

    def scaled(self, a: float) -> "SeparableFunction":
        return SeparableFunction(tuple(SeparableTerm(a * t.coefficient, t.factors) for t in self.terms))

    def __mul__(self, other: "SeparableFunction") -> "SeparableFunction":
        """Pointwise product, expanded into len(self) * len(other) terms."""
        terms = []
        for s in self.terms:
            for t in other.terms:
                dims = list(dict.fromkeys([*s.factors, *t.factors]))
                terms.append(SeparableTerm(
                    s.coefficient * t.coefficient,
                    {d: _multiply(s.factor(d), t.factor(d)) for d in dims}))
        return SeparableFunction(tuple(terms))

    def evaluate(self, point: Mapping[str, float | np.ndarray]) -> np.ndarray:
        out = 0.0
        for t in self.terms:
            out = out + t.evaluate(point)
        return np.asarray(out, dtype=float)

    def to_dict(self):
        return {"terms": [t.to_dict() for t in self.terms]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SeparableFunction":
        terms = []
        for t in d.get("terms", []):
            facs = {dim: factor_from_dict(f) for dim, f in t.get("factors", {}).items()}
            terms.append(SeparableTerm(float(t.get("coefficient", 1.0)), facs))
        return cls(tuple(terms))
