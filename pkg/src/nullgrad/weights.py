"""Girsanov weights built from control kernels.

For directions y_1..y_n and a control operator U(t) these are the Ito
integrals I_t(y) of u(t, y; .) against the noise, their Gram matrix J_t, the
symmetric n-fold integrals defined by the recursion

    I^n_s = sum_j int_0^s I^{n-1}_r(y without y_j) <u(t, y_j; r), dW(r)>,

and the exponential density M_u(t).  Path-based quantities use left-point
(Ito) sums on the path grid; arrays may carry any number of leading path axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .control import ControlKernel
from .errors import CapacityError
from .quadrature import integrate

MAX_ORDER = 6


@dataclass(frozen=True, eq=False)
class WeightSet:
    directions: np.ndarray
    I: np.ndarray
    J: np.ndarray
    Infold: np.ndarray
    M: np.ndarray | None = None

    @property
    def n(self):
        return self.directions.shape[0]


def _directions(directions, d):
    Y = np.asarray(directions, dtype=float).reshape(-1, d)
    return Y


def compute_J(ctrl_i: ControlKernel, ctrl_j: ControlKernel, y_i, y_j, t=None) -> float:
    """J_t(y_i, y_j), the L^2(0, t) inner product of the two controls."""
    y_i = np.asarray(y_i, dtype=float)
    y_j = np.asarray(y_j, dtype=float)
    if ctrl_i is ctrl_j:
        return float(y_i @ ctrl_i.gram_matrix() @ y_j)
    t = ctrl_i.t if t is None else float(t)
    if abs(ctrl_j.t - t) > 1e-12 * t:
        raise ValueError("controls have different horizons")
    bps = sorted(set(ctrl_i.breakpoints) | set(ctrl_j.breakpoints))

    def integrand(s):
        return np.einsum("km,km->k", ctrl_i.apply(s, y_i), ctrl_j.apply(s, y_j))

    return float(integrate(integrand, 0.0, t, breakpoints=bps))


def gram(ctrl: ControlKernel, directions) -> np.ndarray:
    """Matrix of J_t(y_i, y_j) over a direction list."""
    Y = _directions(directions, ctrl.sys.d)
    J = Y @ ctrl.gram_matrix() @ Y.T
    return 0.5 * (J + J.T)


def control_increments(path, ctrl: ControlKernel, directions) -> np.ndarray:
    """<u(t, y_j; s_k), dW_k> for every step and direction: shape (..., steps, n)."""
    Y = _directions(directions, ctrl.sys.d)
    U = ctrl.apply(path.grid.left_nodes, Y.T)
    return np.einsum("...km,kmn->...kn", path.dW, U)


def ito_I(path, ctrl: ControlKernel, y) -> np.ndarray:
    """Left-point Ito sum of <u(t, y; s_k), dW_k>."""
    y = np.asarray(y, dtype=float)
    U = ctrl.apply(path.grid.left_nodes, y)
    return np.einsum("...km,km->...", path.dW, U)


@lru_cache(maxsize=None)
def _subsets_by_size(n):
    return tuple(sorted(range(1, 1 << n), key=lambda S: (bin(S).count("1"), S)))


def nfold_from_increments(dI: np.ndarray) -> np.ndarray:
    """Run the n-fold recursion over precomputed increments (..., steps, n).

    Tracks the running integral of every subset of directions (the empty
    subset is identically 1).  A subset's value before step k is the sum over
    earlier steps of its one-smaller subsets times the matching increment,
    which is the Ito (left-point) rule; subsets are built smallest first, each
    as an exclusive cumulative sum over the whole time axis.
    """
    n = dI.shape[-1]
    if n < 1:
        raise ValueError("need at least one direction")
    if n > MAX_ORDER:
        raise CapacityError(f"order {n} exceeds the cap of {MAX_ORDER} directions")
    full = (1 << n) - 1
    series = {0: None}
    total = None
    for S in _subsets_by_size(n):
        contrib = None
        for j in range(n):
            bit = 1 << j
            if not S & bit:
                continue
            prev = series[S ^ bit]
            term = dI[..., :, j] if prev is None else prev * dI[..., :, j]
            contrib = term if contrib is None else contrib + term
        if S == full:
            total = contrib.sum(axis=-1)
        else:
            running = np.cumsum(contrib, axis=-1)
            running[..., 1:] = running[..., :-1].copy()
            running[..., 0] = 0.0
            series[S] = running
    return total


def nfold(path, ctrls, directions) -> np.ndarray:
    """Terminal n-fold symmetric integral I^n_t(y_1, ..., y_n) on a path grid.

    ``ctrls`` is a single kernel shared by all directions or one per direction.
    Directions are put in a canonical order before the recursion, so any
    permutation of the input gives bit-identical results.
    """
    shared = isinstance(ctrls, ControlKernel)
    d = (ctrls if shared else ctrls[0]).sys.d
    Y = _directions(directions, d)
    if Y.shape[0] > MAX_ORDER:
        raise CapacityError(f"order {Y.shape[0]} exceeds the cap of {MAX_ORDER} directions")
    if not shared and len(ctrls) != Y.shape[0]:
        raise ValueError("need one control per direction")
    order = np.lexsort(Y.T[::-1]) if Y.shape[0] else np.arange(0)
    Y = Y[order]
    if shared:
        dI = control_increments(path, ctrls, Y)
    else:
        ctrls = [ctrls[i] for i in order]
        dI = np.stack([control_increments(path, c, y)[..., 0] for c, y in zip(ctrls, Y)], axis=-1)
    return nfold_from_increments(dI)


@lru_cache(maxsize=None)
def pairings(n):
    """All partitions of range(n) into singletons and pairs, as (pairs, singles)."""
    if n > MAX_ORDER:
        raise CapacityError(f"order {n} exceeds the cap of {MAX_ORDER} directions")

    def _all(items):
        if not items:
            yield (), ()
            return
        first, rest = items[0], items[1:]
        for p, s in _all(rest):
            yield p, (first,) + s
        for k, other in enumerate(rest):
            for p, s in _all(rest[:k] + rest[k + 1:]):
                yield ((first, other),) + p, s

    return tuple(_all(tuple(range(n))))


def wick_weight(I, J) -> np.ndarray:
    """Closed form of the recursion's terminal value.

    Sum over partitions of the directions into singletons and pairs, a
    singleton i contributing I_i and a pair {i, j} contributing -J_ij.
    ``I`` may have leading sample axes.
    """
    I = np.asarray(I, dtype=float)
    J = np.asarray(J, dtype=float)
    n = I.shape[-1]
    if n == 0:
        return np.ones(I.shape[:-1])
    total = np.zeros(I.shape[:-1])
    for pairs, singles in pairings(n):
        coef = 1.0
        for i, j in pairs:
            coef *= -J[i, j]
        if coef == 0.0 and pairs:
            continue
        term = np.full(I.shape[:-1], coef)
        for i in singles:
            term = term * I[..., i]
        total = total + term
    return total


def girsanov_density(path, ctrl: ControlKernel, x, sign: int = 1) -> np.ndarray:
    """M_u(t) = exp(int <u, dW> - 1/2 int |u|^2) with u = sign * u(t, x; .).

    Both integrals are left-point sums on the path grid, evaluated in log space.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    U = ctrl.apply(path.grid.left_nodes, np.asarray(x, dtype=float))
    stoch = np.einsum("...km,km->...", path.dW, U)
    energy = path.grid.h * float(np.sum(U * U))
    return np.exp(sign * stoch - 0.5 * energy)


def density_from_terminal(I, J_xx, sign: int = 1) -> np.ndarray:
    """Exact-law counterpart of :func:`girsanov_density` from I_t(x) and J_t(x, x)."""
    return np.exp(sign * np.asarray(I, dtype=float) - 0.5 * float(J_xx))


def weight_set(path, ctrl: ControlKernel, directions, density_for=None, sign=-1) -> WeightSet:
    Y = _directions(directions, ctrl.sys.d)
    dI = control_increments(path, ctrl, Y)
    I = dI.sum(axis=-2)
    Infold = nfold_from_increments(dI) if Y.shape[0] else np.ones(I.shape[:-1])
    M = None if density_for is None else girsanov_density(path, ctrl, density_for, sign)
    return WeightSet(Y, I, gram(ctrl, Y), Infold, M)
