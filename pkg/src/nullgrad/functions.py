"""Test functions phi for semigroup and derivative estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

POLYNOMIAL = "polynomial"
INDICATOR = "half-space-indicator"
TANH_RIDGE = "tanh-ridge"
GAUSSIAN_BUMP = "gaussian-bump"
FUNCTION_KINDS = (POLYNOMIAL, INDICATOR, TANH_RIDGE, GAUSSIAN_BUMP)


def _vec(v):
    return np.asarray(v, dtype=float).reshape(-1)


@dataclass(frozen=True, eq=False)
class TestFunction:
    """One of four families of test functions on R^d.

    polynomial
        ``terms`` is a tuple of (coefficient, exponents) pairs.
    half-space-indicator
        1 if <c, x> >= tau else 0.
    tanh-ridge
        tanh(<c, x> - tau).
    gaussian-bump
        exp(-|x - center|^2 / (2 width^2)).
    """

    __test__ = False  # not a pytest class

    kind: str
    d: int
    terms: tuple = ()
    c: np.ndarray | None = None
    tau: float = 0.0
    center: np.ndarray | None = None
    width: float = 1.0
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind not in FUNCTION_KINDS:
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if self.kind == POLYNOMIAL:
            terms = []
            for coef, exps in self.terms:
                exps = tuple(int(e) for e in exps)
                if len(exps) != self.d or min(exps, default=0) < 0:
                    raise ValueError(f"bad exponent tuple {exps} for d={self.d}")
                if not math.isfinite(float(coef)):
                    raise ValueError("polynomial coefficients must be finite")
                terms.append((float(coef), exps))
            object.__setattr__(self, "terms", tuple(terms))
        if self.kind in (INDICATOR, TANH_RIDGE):
            c = _vec(self.c)
            if c.shape != (self.d,) or not np.any(c):
                raise ValueError("normal vector c must be a non-zero d-vector")
            object.__setattr__(self, "c", c)
        if self.kind == GAUSSIAN_BUMP:
            center = _vec(self.center if self.center is not None else np.zeros(self.d))
            if center.shape != (self.d,):
                raise ValueError("bump center must be a d-vector")
            if not self.width > 0:
                raise ValueError("bump width must be positive")
            object.__setattr__(self, "center", center)

    # constructors -------------------------------------------------------

    @classmethod
    def polynomial(cls, terms, d):
        return cls(POLYNOMIAL, d, terms=tuple(terms))

    @classmethod
    def constant(cls, value, d):
        return cls.polynomial([(value, (0,) * d)], d)

    @classmethod
    def coordinate(cls, i, d, power=1):
        exps = [0] * d
        exps[i] = power
        return cls.polynomial([(1.0, tuple(exps))], d)

    @classmethod
    def indicator(cls, c, tau=0.0):
        c = _vec(c)
        return cls(INDICATOR, c.size, c=c, tau=float(tau))

    @classmethod
    def tanh_ridge(cls, c, tau=0.0):
        c = _vec(c)
        return cls(TANH_RIDGE, c.size, c=c, tau=float(tau))

    @classmethod
    def gaussian_bump(cls, center, width=1.0):
        center = _vec(center)
        return cls(GAUSSIAN_BUMP, center.size, center=center, width=float(width))

    # properties ---------------------------------------------------------

    @property
    def degree(self):
        if self.kind != POLYNOMIAL:
            return None
        return max((sum(e) for c, e in self.terms if c != 0.0), default=0)

    @property
    def bounded(self):
        return self.kind != POLYNOMIAL or self.degree == 0

    @property
    def sup_abs(self):
        if self.kind == POLYNOMIAL:
            if self.degree == 0:
                return abs(sum(c for c, _ in self.terms))
            return math.inf
        return 1.0

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        if self.kind == POLYNOMIAL:
            out = np.zeros(X.shape[:-1])
            for coef, exps in self.terms:
                term = np.full(X.shape[:-1], coef)
                for i, e in enumerate(exps):
                    if e:
                        term = term * X[..., i] ** e
                out = out + term
            return out
        if self.kind == INDICATOR:
            return (X @ self.c >= self.tau).astype(float)
        if self.kind == TANH_RIDGE:
            return np.tanh(X @ self.c - self.tau)
        r2 = np.sum((X - self.center) ** 2, axis=-1)
        return np.exp(-0.5 * r2 / self.width**2)

    def directional_polynomial(self, v):
        """Polynomial for the derivative x -> D phi(x)[v] (polynomial kind only)."""
        if self.kind != POLYNOMIAL:
            raise ValueError("only polynomials have polynomial derivatives")
        v = _vec(v)
        acc = {}
        for coef, exps in self.terms:
            for i, e in enumerate(exps):
                if e == 0 or v[i] == 0.0:
                    continue
                new = list(exps)
                new[i] -= 1
                key = tuple(new)
                acc[key] = acc.get(key, 0.0) + coef * e * v[i]
        terms = [(c, e) for e, c in sorted(acc.items())] or [(0.0, (0,) * self.d)]
        return TestFunction.polynomial(terms, self.d)

    # serialization ------------------------------------------------------

    def to_dict(self):
        out = {"kind": self.kind, "d": self.d}
        if self.kind == POLYNOMIAL:
            out["terms"] = [[c, list(e)] for c, e in self.terms]
        elif self.kind in (INDICATOR, TANH_RIDGE):
            out["c"] = self.c.tolist()
            out["tau"] = self.tau
        else:
            out["center"] = self.center.tolist()
            out["width"] = self.width
        return out

    @classmethod
    def from_dict(cls, data, d=None):
        kind = data["kind"]
        d = int(data.get("d", d))
        if kind == POLYNOMIAL:
            return cls.polynomial([(c, tuple(e)) for c, e in data["terms"]], d)
        if kind in (INDICATOR, TANH_RIDGE):
            return cls(kind, d, c=data["c"], tau=float(data.get("tau", 0.0)))
        if kind == GAUSSIAN_BUMP:
            return cls(kind, d, center=data.get("center"), width=float(data.get("width", 1.0)))
        raise ValueError(f"unknown test function kind {kind!r}")
