"""Linear systems dX = (AX + a)dt + B dW and their Gaussian primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .quadrature import DEFAULT_RTOL, integrate

__all__ = [
    "LinearSystem",
    "TimeGrid",
    "GaussianMoments",
    "semigroup",
    "semigroup_action",
    "drift_integral",
    "gramian",
    "transition_moments",
]


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Finite-dimensional linear SDE with additive noise.

    Parameters
    ----------
    A : (d, d) array_like
        Drift generator.
    B : (d, m) array_like
        Noise (and control input) map.
    a : (d,) array_like, optional
        Constant drift; zero by default.
    label : str
        Free-form identifier carried into reports.

    Notes
    -----
    A diagonal ``A`` is detected on construction and flagged; the semigroup
    and Gramian then use elementwise formulas, which is what makes spectral
    truncations with d in the hundreds cheap.
    """

    A: np.ndarray
    B: np.ndarray
    a: np.ndarray = None
    label: str = ""
    diagonal: bool = field(init=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        d = A.shape[0]
        if B.ndim != 2 or B.shape[0] != d or B.shape[1] < 1:
            raise ValueError(f"B must be {d}x m with m >= 1, got shape {B.shape}")
        a = np.zeros(d) if self.a is None else np.asarray(self.a, dtype=float).reshape(-1)
        if a.shape != (d,):
            raise ValueError(f"a must have length {d}, got shape {a.shape}")
        for name, arr in (("A", A), ("B", B), ("a", a)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "label", str(self.label))
        object.__setattr__(self, "diagonal", bool(np.count_nonzero(A - np.diag(np.diag(A))) == 0))

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def eigenvalues(self):
        """Diagonal of A (only meaningful when ``diagonal`` is set)."""
        return np.diag(self.A)

    def without_drift(self):
        return LinearSystem(self.A, self.B, None, self.label)

    def __eq__(self, other):
        if not isinstance(other, LinearSystem):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.B, other.B)
            and np.array_equal(self.a, other.a)
        )

    __hash__ = None


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, t] into ``steps`` cells."""

    t: float
    steps: int

    def __post_init__(self):
        if not (math.isfinite(self.t) and self.t > 0):
            raise ValueError(f"horizon must be positive and finite, got {self.t}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def h(self):
        return self.t / self.steps

    @property
    def nodes(self):
        return np.linspace(0.0, self.t, self.steps + 1)

    @property
    def left_nodes(self):
        return self.nodes[:-1]

    def refine(self, factor=2):
        return TimeGrid(self.t, self.steps * factor)


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        scale = max(float(np.max(np.abs(cov), initial=0.0)), 1e-300)
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12 * scale:
            raise ValueError("covariance is not symmetric")
        if cov.size and np.linalg.eigvalsh(cov)[0] < -1e-12 * scale * cov.shape[0]:
            raise ValueError("covariance is not positive semidefinite")


def _check_time(t, strict=False):
    t = float(t)
    if not math.isfinite(t):
        raise ValueError(f"time must be finite, got {t}")
    if t < 0 or (strict and t == 0):
        raise ValueError(f"time must be {'positive' if strict else 'non-negative'}, got {t}")
    return t


def semigroup(sys: LinearSystem, t: float) -> np.ndarray:
    """Matrix exponential e^{tA}."""
    t = _check_time(t)
    if t == 0.0:
        return np.eye(sys.d)
    if sys.diagonal:
        return np.diag(np.exp(t * sys.eigenvalues))
    return scipy.linalg.expm(t * sys.A)


def _uniform_step(s):
    if s.size < 64:
        return None
    steps = np.diff(s)
    h = steps.mean()
    if h == 0 or np.max(np.abs(steps - h)) > 1e-9 * abs(h):
        return None
    return h


def _power_stack(E, count):
    """E^0, E^1, ..., E^{count-1} by repeated doubling."""
    d = E.shape[0]
    out = np.empty((count, d, d))
    out[0] = np.eye(d)
    n = 1
    power = E.copy()
    while n < count:
        take = min(n, count - n)
        out[n:n + take] = out[:take] @ power
        n += take
        power = power @ power
    return out


def _stacked_expm(A, s):
    """e^{s_k A} for every entry of the 1-D array ``s``."""
    h = _uniform_step(s)
    if h is not None and h < 0:
        return _stacked_expm(A, s[::-1])[::-1]
    if h is not None:
        # Uniform nodes: S(s_0) e^{k h A}.  Exact up to rounding, much cheaper.
        E = scipy.linalg.expm(h * A)
        stack = _power_stack(E, s.size)
        if s[0] != 0.0:
            stack = scipy.linalg.expm(s[0] * A) @ stack
        return stack
    return scipy.linalg.expm(s[:, None, None] * A)


def semigroup_action(sys: LinearSystem, s, V, transpose=False) -> np.ndarray:
    """Evaluate S(s_k) V (or S(s_k)^T V) for every time in ``s``.

    ``V`` is a (d,) vector or (d, n) matrix; the result has shape
    (len(s), d) or (len(s), d, n) respectively.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    V = np.asarray(V, dtype=float)
    vec = V.ndim == 1
    V2 = V.reshape(sys.d, -1)
    if sys.diagonal:
        out = np.exp(np.outer(s, sys.eigenvalues))[:, :, None] * V2[None]
    else:
        A = sys.A.T if transpose else sys.A
        out = _stacked_expm(A, s) @ V2
    return out[..., 0] if vec else out


def drift_integral(sys: LinearSystem, t: float) -> np.ndarray:
    """The deterministic convolution term, integral of S(r) a over [0, t]."""
    t = _check_time(t)
    if t == 0.0 or not np.any(sys.a):
        return np.zeros(sys.d)
    if sys.diagonal:
        lam = sys.eigenvalues
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(lam == 0.0, t, np.expm1(lam * t) / np.where(lam == 0.0, 1.0, lam))
        return factor * sys.a
    d = sys.d
    block = np.zeros((d + 1, d + 1))
    block[:d, :d] = sys.A
    block[:d, d] = sys.a
    return scipy.linalg.expm(t * block)[:d, d]


def _diagonal_gramian(sys, t):
    lam = sys.eigenvalues
    total = lam[:, None] + lam[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(total == 0.0, t, np.expm1(total * t) / np.where(total == 0.0, 1.0, total))
    return (sys.B @ sys.B.T) * factor


def gramian(sys: LinearSystem, t: float, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """Controllability Gramian, the integral of S(s) B B^T S(s)^T over [0, t].

    Dense generators use adaptive Gauss-Legendre at relative tolerance
    ``rtol``; diagonal generators use the closed form.  The result is
    symmetrized.

    Raises
    ------
    QuadratureError
        If interval halving cannot reach ``rtol``.
    """
    t = _check_time(t)
    if t == 0.0:
        return np.zeros((sys.d, sys.d))
    if sys.diagonal:
        G = _diagonal_gramian(sys, t)
    else:
        def integrand(s):
            F = semigroup_action(sys, s, sys.B)
            return F @ np.swapaxes(F, 1, 2)

        G = integrate(integrand, 0.0, t, rtol=rtol)
    return 0.5 * (G + G.T)


def transition_moments(sys: LinearSystem, x, t: float) -> GaussianMoments:
    """Mean and covariance of the Gaussian law of X^x(t)."""
    t = _check_time(t)
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (sys.d,):
        raise ValueError(f"x must have length {sys.d}")
    if t == 0.0:
        return GaussianMoments(x.copy(), np.zeros((sys.d, sys.d)))
    mean = semigroup(sys, t) @ x + drift_integral(sys, t)
    return GaussianMoments(mean, gramian(sys, t))
