"""Null-control synthesis and controllability analysis.

A control kernel realizes the linear map x -> u(t, x; .) that steers the
deterministic system dY = (AY + Bu) ds from Y(0) = x to Y(t) = 0.  All kernels
are matrix-valued functions K(s) of shape (m, d) with u(t, x; s) = K(s) x.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ControlConstructionError, NotControllableError
from .model import LinearSystem, TimeGrid, gramian, semigroup, semigroup_action
from .quadrature import integrate

MINIMAL_ENERGY = "minimal-energy"
INVERTIBLE_B = "invertible-B"
HALF_INTERVAL = "half-interval"
TABULATED = "tabulated"
KINDS = (MINIMAL_ENERGY, INVERTIBLE_B, HALF_INTERVAL, TABULATED)

DEFAULT_TABLE_NODES = 2048
PINV_CUTOFF = 1e-12
B_COND_LIMIT = 1e12


@dataclass(frozen=True)
class ControllabilityReport:
    rank: int
    K: int | None
    controllable: bool
    gramian_min_eig: float | None = None
    norm_Ut: float | None = None
    horizon: float | None = None

    def to_dict(self):
        return {
            "rank": self.rank,
            "K": self.K if self.K is not None else "not controllable",
            "controllable": self.controllable,
            "gramian_min_eig": self.gramian_min_eig,
            "norm_Ut": self.norm_Ut,
            "horizon": self.horizon,
        }


@dataclass(frozen=True)
class ScalingFit:
    times: np.ndarray
    norms: np.ndarray
    slope: float
    intercept: float
    residual: float
    vanishing_energy: bool
    tail_times: np.ndarray = field(repr=False, default=None)
    tail_norms: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        return {
            "times": [float(t) for t in self.times],
            "norms": [float(n) for n in self.norms],
            "slope": self.slope,
            "intercept": self.intercept,
            "residual": self.residual,
            "vanishing_energy": self.vanishing_energy,
        }


def kalman_rank(sys: LinearSystem, t: float | None = None) -> ControllabilityReport:
    """Rank of [B, AB, ..., A^{d-1}B] and the minimal exponent K.

    The rank uses an SVD threshold of sigma_max * d * 1e-12 on the stacked
    (block-normalized) matrix.  K is the smallest k with
    rank [B, ..., A^k B] = d.  When a horizon ``t``
    is given the report also carries the smallest Gramian eigenvalue and the
    minimal-energy control norm at that horizon.
    """
    d = sys.d

    # Each block is rescaled to unit norm before stacking; column scaling
    # leaves the rank unchanged but keeps powers of stiff A from swamping B.
    def unit(M):
        n = np.linalg.norm(M, 2)
        return M / n if n > 0 else M

    blocks = [unit(sys.B)]
    for _ in range(d - 1):
        blocks.append(unit(sys.A @ blocks[-1]))
    full = np.hstack(blocks)
    sigma_max = np.linalg.norm(full, 2) if full.size else 0.0
    threshold = sigma_max * d * 1e-12

    def rank_of(mat):
        if sigma_max == 0.0:
            return 0
        sv = np.linalg.svd(mat, compute_uv=False)
        return int(np.sum(sv > threshold))

    K = None
    rank = 0
    for k in range(d):
        rank = rank_of(np.hstack(blocks[:k + 1]))
        if rank == d:
            K = k
            break
    controllable = K is not None

    min_eig = norm = None
    if t is not None:
        G = gramian(sys, t)
        min_eig = float(np.linalg.eigvalsh(G)[0])
        if controllable:
            try:
                norm = minimal_energy_control(sys, t).operator_norm()
            except NotControllableError:
                norm = math.inf
        else:
            norm = math.inf
    return ControllabilityReport(rank, K, controllable, min_eig, norm, t)


def _psd_pinv(G):
    """Pseudo-inverse of a symmetric PSD matrix and its smallest eigenvalue.

    Raises NotControllableError when any eigenvalue falls below the cutoff.
    """
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    lam_max = w[-1]
    if lam_max <= 0.0 or w[0] <= PINV_CUTOFF * lam_max:
        raise NotControllableError(
            f"controllability Gramian is singular (smallest eigenvalue {w[0]:.3e}, "
            f"largest {lam_max:.3e}); check the Kalman rank or use a larger horizon",
            min_eigenvalue=float(w[0]),
        )
    return (V / w) @ V.T, float(w[0])


@dataclass(frozen=True, eq=False)
class ControlKernel:
    """Matrix-valued kernel s -> K(s) with u(t, x; s) = K(s) x on [0, t].

    Use the constructors :func:`minimal_energy_control`,
    :func:`invertible_b_control`, :func:`half_interval_control` or
    :meth:`tabulate` instead of building instances by hand.
    """

    sys: LinearSystem
    t: float
    kind: str
    factor: np.ndarray = field(repr=False, default=None)
    grid: TimeGrid | None = None
    table: np.ndarray | None = field(repr=False, default=None)
    info: dict = field(default_factory=dict)

    @property
    def support_start(self):
        return 0.5 * self.t if self.kind == HALF_INTERVAL else 0.0

    @property
    def breakpoints(self):
        if self.kind == HALF_INTERVAL:
            return (0.5 * self.t,)
        return ()

    def apply(self, s, y, left_limit=False):
        """Values u(t, y; s) for every time in ``s``.

        ``y`` is a (d,) vector or a (d, n) matrix of directions; the result is
        (len(s), m) or (len(s), m, n).  ``left_limit`` selects the left limit
        at jumps, which only matters for the half-interval kernel.
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        y = np.asarray(y, dtype=float)
        vec = y.ndim == 1
        Y = y.reshape(self.sys.d, -1)
        sys = self.sys
        if self.kind == MINIMAL_ENERGY:
            W = semigroup_action(sys, self.t - s, self.factor @ Y, transpose=True)
            out = -np.einsum("dm,kdn->kmn", sys.B, W)
        elif self.kind in (INVERTIBLE_B, HALF_INTERVAL):
            W = semigroup_action(sys, s, Y)
            out = np.einsum("md,kdn->kmn", self.factor, W)
            if self.kind == HALF_INTERVAL:
                half = 0.5 * self.t
                on = s > half if left_limit else s >= half
                out = out * on[:, None, None]
        else:
            out = self._interpolate(s) @ Y
        return out[..., 0] if vec else out

    def matrices(self, s, left_limit=False):
        return self.apply(s, np.eye(self.sys.d), left_limit=left_limit)

    def _interpolate(self, s):
        h = self.grid.h
        pos = np.clip(s / h, 0.0, self.grid.steps)
        idx = np.minimum(np.floor(pos).astype(int), self.grid.steps - 1)
        w = (pos - idx)[:, None, None]
        return (1.0 - w) * self.table[idx] + w * self.table[idx + 1]

    def gram_matrix(self):
        """The d x d matrix M with ||U(t)x||^2 = x^T M x in L^2(0, t; R^m)."""
        sys = self.sys
        if self.kind == MINIMAL_ENERGY:
            G = self.info["gramian"]
            M = self.factor.T @ G @ self.factor
        elif self.kind == TABULATED:
            left = self.table[:-1]
            M = self.grid.h * np.einsum("kmi,kmj->ij", left, left)
        elif sys.diagonal:
            lo, hi = self.support_start, self.t
            lam = sys.eigenvalues
            total = lam[:, None] + lam[None, :]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                safe = np.where(total == 0.0, 1.0, total)
                span = np.where(
                    total == 0.0,
                    hi - lo,
                    np.exp(total * lo) * np.expm1(total * (hi - lo)) / safe,
                )
            M = (self.factor.T @ self.factor) * span
        else:
            def integrand(s):
                Ks = self.matrices(s)
                return np.einsum("kmi,kmj->kij", Ks, Ks)

            M = integrate(integrand, self.support_start, self.t)
        return 0.5 * (M + M.T)

    def operator_norm(self):
        """Operator norm of x -> u(t, x; .) from R^d into L^2(0, t; R^m)."""
        w = np.linalg.eigvalsh(self.gram_matrix())
        return float(math.sqrt(max(w[-1], 0.0)))

    def energy(self, x):
        """Squared L^2 norm of the control steering x."""
        x = np.asarray(x, dtype=float)
        return float(x @ self.gram_matrix() @ x)

    def tabulate(self, steps=DEFAULT_TABLE_NODES):
        grid = TimeGrid(self.t, steps)
        table = self.matrices(grid.nodes)
        return ControlKernel(self.sys, self.t, TABULATED, grid=grid, table=table,
                             info={"source": self.kind})

    def to_csv(self, nodes=None):
        """CSV text with columns s, then the m x d kernel entries row-major."""
        if nodes is None:
            nodes = self.grid.nodes if self.grid is not None else TimeGrid(self.t, DEFAULT_TABLE_NODES).nodes
        nodes = np.asarray(nodes, dtype=float)
        Ks = self.matrices(nodes)
        m, d = self.sys.m, self.sys.d
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["s"] + [f"k_{i}_{j}" for i in range(m) for j in range(d)])
        for s, K in zip(nodes, Ks):
            writer.writerow([format_float(s)] + [format_float(v) for v in K.reshape(-1)])
        return buf.getvalue()


def format_float(v):
    return format(float(v), ".17g")


def _check_horizon(t):
    t = float(t)
    if not (math.isfinite(t) and t > 0):
        raise ValueError(f"horizon must be positive and finite, got {t}")
    return t


def minimal_energy_control(sys: LinearSystem, t: float) -> ControlKernel:
    """Minimum-norm null control u(s) = -B^T S(t-s)^T G_t^+ S(t) x.

    Raises
    ------
    NotControllableError
        If the Gramian at ``t`` is numerically singular.
    """
    t = _check_horizon(t)
    G = gramian(sys, t)
    Ginv, min_eig = _psd_pinv(G)
    factor = Ginv @ semigroup(sys, t)
    return ControlKernel(sys, t, MINIMAL_ENERGY, factor=factor,
                         info={"gramian": G, "gramian_min_eig": min_eig})


def _inverse_b(sys):
    if sys.m != sys.d:
        raise ControlConstructionError(
            f"B must be square for this control, got {sys.d}x{sys.m}"
        )
    cond = float(np.linalg.cond(sys.B))
    if not math.isfinite(cond) or cond > B_COND_LIMIT:
        raise ControlConstructionError(f"B is numerically singular (condition number {cond:.3e})")
    return np.linalg.inv(sys.B), cond


def invertible_b_control(sys: LinearSystem, t: float) -> ControlKernel:
    """Control u(s) = -(1/t) B^{-1} S(s) x for square invertible B."""
    t = _check_horizon(t)
    Binv, cond = _inverse_b(sys)
    return ControlKernel(sys, t, INVERTIBLE_B, factor=-Binv / t, info={"cond_B": cond})


def half_interval_control(sys: LinearSystem, t: float) -> ControlKernel:
    """Control that is zero on [0, t/2) and -(2/t) B^{-1} S(s) x on [t/2, t]."""
    t = _check_horizon(t)
    Binv, cond = _inverse_b(sys)
    return ControlKernel(sys, t, HALF_INTERVAL, factor=-2.0 * Binv / t, info={"cond_B": cond})


def affine_control(sys: LinearSystem, t: float, slope, offset, steps=DEFAULT_TABLE_NODES):
    """Tabulated kernel K(s) = s * slope + offset with (m, d) coefficient matrices."""
    t = _check_horizon(t)
    grid = TimeGrid(t, steps)
    slope = np.asarray(slope, dtype=float).reshape(sys.m, sys.d)
    offset = np.asarray(offset, dtype=float).reshape(sys.m, sys.d)
    table = grid.nodes[:, None, None] * slope + offset
    return ControlKernel(sys, t, TABULATED, grid=grid, table=table, info={"source": "affine"})


_BUILDERS = {
    MINIMAL_ENERGY: minimal_energy_control,
    INVERTIBLE_B: invertible_b_control,
    HALF_INTERVAL: half_interval_control,
}


def build_control(sys: LinearSystem, t: float, kind: str = MINIMAL_ENERGY,
                  table_nodes: int = DEFAULT_TABLE_NODES) -> ControlKernel:
    if kind == TABULATED:
        return minimal_energy_control(sys, t).tabulate(table_nodes)
    try:
        builder = _BUILDERS[kind]
    except KeyError:
        raise ValueError(f"unknown control kind {kind!r}; expected one of {KINDS}") from None
    return builder(sys, t)


def _rk4_maps(A, h):
    """Linear maps of one classical RK4 step for y' = Ay + f(s).

    Returns (R, G0, Gm, G1) with y_next = R y + G0 f(s) + Gm f(s+h/2) + G1 f(s+h).
    """
    d = A.shape[0]
    eye = np.eye(d)
    zero = np.zeros((d, d))

    def step(y, f0, fm, f1):
        k1 = A @ y + f0
        k2 = A @ (y + 0.5 * h * k1) + fm
        k3 = A @ (y + 0.5 * h * k2) + fm
        k4 = A @ (y + h * k3) + f1
        return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    return (step(eye, zero, zero, zero), step(zero, eye, zero, zero),
            step(zero, zero, eye, zero), step(zero, zero, zero, eye))


def verify_null_drive(sys: LinearSystem, x, ctrl: ControlKernel, steps: int = 4000) -> float:
    """Integrate dY = (AY + B u(s)) ds from Y(0) = x with RK4; return ||Y(t)||.

    The constant drift is left out: it does not affect null-controllability.
    At a jump of the control the step ending there uses the left limit.
    """
    if steps < 100:
        raise ValueError("steps must be at least 100")
    x = np.asarray(x, dtype=float).reshape(-1)
    t = ctrl.t
    h = t / steps
    half_nodes = np.linspace(0.0, t, 2 * steps + 1)
    forcing = ctrl.apply(half_nodes, x) @ sys.B.T
    f0 = forcing[0:-1:2]
    fm = forcing[1::2]
    if ctrl.breakpoints:
        f1 = ctrl.apply(half_nodes[2::2], x, left_limit=True) @ sys.B.T
    else:
        f1 = forcing[2::2]
    R, G0, Gm, G1 = _rk4_maps(sys.A, h)
    g = f0 @ G0.T + fm @ Gm.T + f1 @ G1.T
    y = x.copy()
    for gk in g:
        y = R @ y + gk
    return float(np.linalg.norm(y))


def control_operator_norm(sys: LinearSystem, t: float, kind: str = MINIMAL_ENERGY) -> float:
    """Norm of U(t); for the minimal-energy kind this is ||G_t^{-1/2} S(t)||."""
    return build_control(sys, t, kind).operator_norm()


def scaling_fit(sys: LinearSystem, times, kind: str = MINIMAL_ENERGY) -> ScalingFit:
    """Least-squares slope of log ||U(t)|| against log t.

    ``vanishing_energy`` is set when the norm at the largest time is below the
    norm at the smallest and the norm strictly decreases over five log-spaced
    points covering the upper half (in log scale) of the time range.
    """
    times = np.asarray(times, dtype=float)
    if times.size < 4:
        raise ValueError("scaling_fit needs at least 4 times")
    if np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise ValueError("times must be positive and strictly increasing")
    norms = np.array([control_operator_norm(sys, t, kind) for t in times])
    if np.any(norms <= 0) or not np.all(np.isfinite(norms)):
        raise ValueError("control norms must be positive and finite")
    lt, ln = np.log(times), np.log(norms)
    slope, intercept = np.polyfit(lt, ln, 1)
    residual = float(np.max(np.abs(ln - (slope * lt + intercept))))
    tail_times = np.geomspace(math.sqrt(times[0] * times[-1]), times[-1], 5)
    tail_norms = np.array([control_operator_norm(sys, t, kind) for t in tail_times])
    vanishing = bool(norms[-1] < norms[0] and np.all(np.diff(tail_norms) < 0))
    return ScalingFit(times, norms, float(slope), float(intercept), residual, vanishing,
                      tail_times, tail_norms)


# Affine null controls u(s) = a(t,x) s + b(t,x) for the Kolmogorov pair
# A = [[0,1],[0,0]], B = [0,1]^T, as coefficient rows acting on x.

def kolmogorov_published_coefficients(t):
    slope = [[1.0 / (12.0 * t**3), -35.0 / (18.0 * t**2)]]
    offset = [[-1.0 / (24.0 * t**2), -1.0 / (36.0 * t)]]
    return np.array(slope), np.array(offset)


def kolmogorov_linear_solve_coefficients(t):
    """Unique affine control solving int u = -x2, int (t-s) u = -x1 - t x2."""
    # Moments of the affine control against 1 and (t - s):
    #   [t^2/2, t] [alpha]   [-x2]           [t^3/6, t^2/2] [alpha]   [-x1 - t x2]
    moments = np.array([[t**2 / 2.0, t], [t**3 / 6.0, t**2 / 2.0]])
    rhs = np.array([[0.0, -1.0], [-1.0, -t]])
    coeffs = np.linalg.solve(moments, rhs)
    return coeffs[:1], coeffs[1:]


def kolmogorov_coefficient_audit(t=1.0, points=((1.0, 0.0), (0.0, 1.0), (1.0, 1.0)), steps=4000):
    """Drive-to-zero residuals of published and linear-solve affine controls."""
    sys = LinearSystem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], label="kolmogorov")
    published = affine_control(sys, t, *kolmogorov_published_coefficients(t))
    solved = affine_control(sys, t, *kolmogorov_linear_solve_coefficients(t))
    minimal = minimal_energy_control(sys, t)
    probe = np.linspace(0.0, t, 257)
    gap = float(np.max(np.abs(solved.matrices(probe) - minimal.matrices(probe))))
    rows = []
    for x in points:
        rows.append({
            "x": list(map(float, x)),
            "published_residual": verify_null_drive(sys, x, published, steps),
            "linear_solve_residual": verify_null_drive(sys, x, solved, steps),
        })
    slope, offset = kolmogorov_linear_solve_coefficients(t)
    return {
        "t": float(t),
        "published_drives_to_zero": all(r["published_residual"] <= 1e-6 * np.linalg.norm(r["x"]) for r in rows),
        "linear_solve_drives_to_zero": all(r["linear_solve_residual"] <= 1e-6 * np.linalg.norm(r["x"]) for r in rows),
        "linear_solve_slope": slope.reshape(-1).tolist(),
        "linear_solve_offset": offset.reshape(-1).tolist(),
        "linear_solve_vs_minimal_energy_max_gap": gap,
        "points": rows,
    }
