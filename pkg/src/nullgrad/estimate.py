"""Monte Carlo estimators of P_t phi and D^n P_t phi with Girsanov weights.

Two samplers feed every estimator:

``exact``
    Joint Gaussian draws of (X(t), I_t(y_1), ..., I_t(y_n)); n-fold weights
    come from the closed-form pairing polynomial.
``grid``
    Exponential-Euler paths with left-point Ito sums and the subset
    recursion for n-fold weights.

Each block of draws is reduced to (count, mean, M2) moments that merge
associatively, and blocks are merged in index order, so the worker count
never changes a result.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import weights as W
from .control import MINIMAL_ENERGY, ControlKernel, build_control, scaling_fit
from .errors import CapacityError, NullGradError, UnsupportedFunctionError
from .functions import GAUSSIAN_BUMP, INDICATOR, POLYNOMIAL, TANH_RIDGE, TestFunction
from .model import LinearSystem, TimeGrid, semigroup, transition_moments
from .paths import DEFAULT_STEPS, ExactTerminalSampler, sample_paths

EXACT = "exact"
GRID = "grid"
SAMPLERS = (EXACT, GRID)
GRID_BATCH = 2048
GH_NODES = 128


def worker_count():
    """Worker cap from NULLGRAD_THREADS, defaulting to the CPU count."""
    env = os.environ.get("NULLGRAD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


@dataclass(frozen=True)
class Moments:
    """Count, mean and centred sum of squares of a sample (Chan et al. merge)."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, values):
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size == 0:
            return cls()
        mean = float(np.mean(values))
        return cls(values.size, mean, float(np.sum((values - mean) ** 2)))

    def merge(self, other):
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return Moments(n, mean, m2)

    @property
    def variance(self):
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def std_error(self):
        return math.sqrt(self.variance / self.count) if self.count > 0 else math.inf


def merge_all(parts):
    total = Moments()
    for p in parts:
        total = total.merge(p)
    return total


@dataclass
class EstimateReport:
    value: float
    std_error: float
    N: int
    h: float
    oracle: float | None = None
    abs_gap: float | None = None
    z_score: float | None = None
    bound: float | None = None
    verdict: str | None = None
    tolerance_se: float = 3.0
    extra: dict = field(default_factory=dict)

    def compare(self, oracle, k=None):
        """Attach an oracle value and a pass/fail verdict at k standard errors."""
        if k is not None:
            self.tolerance_se = float(k)
        self.oracle = float(oracle)
        self.abs_gap = abs(self.value - self.oracle)
        if self.std_error > 0:
            self.z_score = (self.value - self.oracle) / self.std_error
        else:
            self.z_score = 0.0 if self.abs_gap == 0 else math.copysign(math.inf, self.value - self.oracle)
        self.verdict = "pass" if self.abs_gap <= self.tolerance_se * self.std_error + 1e-12 * max(1.0, abs(self.oracle)) else "fail"
        return self

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_dict(self):
        return asdict(self)


def _run_blocks(func, items):
    items = list(items)
    workers = min(worker_count(), len(items)) or 1
    if workers == 1:
        return [func(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def _check_sampler(sampler):
    if sampler not in SAMPLERS:
        raise ValueError(f"sampler must be one of {SAMPLERS}, got {sampler!r}")


def _exact_blocks(sampler_obj, N, seed, func):
    from .paths import EXACT_BLOCK

    starts = list(range(0, N, EXACT_BLOCK))

    def run(b):
        draw = sampler_obj.block(seed, b)
        take = min(EXACT_BLOCK, N - starts[b])
        return Moments.of(func(draw.x_T[:take], draw.I[:take]))

    return merge_all(_run_blocks(run, range(len(starts))))


def _grid_blocks(sys, x, grid, seed, N, func):
    starts = list(range(0, N, GRID_BATCH))

    def run(start):
        batch = sample_paths(sys, x, grid, seed, np.arange(start, min(start + GRID_BATCH, N)))
        return Moments.of(func(batch))

    return merge_all(_run_blocks(run, starts))


def _report(mom: Moments, h):
    return EstimateReport(mom.mean, mom.std_error, mom.count, h)


def estimate_semigroup(sys: LinearSystem, phi: TestFunction, x, t: float, N: int,
                       sampler: str = EXACT, seed: int = 0, steps: int = DEFAULT_STEPS) -> EstimateReport:
    """Sample mean of phi(X^x(t))."""
    _check_sampler(sampler)
    if N < 100:
        raise ValueError("N must be at least 100")
    if sampler == EXACT:
        s = ExactTerminalSampler(sys, x, t)
        return _report(_exact_blocks(s, N, seed, lambda X, I: phi(X)), 0.0)
    grid = TimeGrid(t, steps)
    return _report(_grid_blocks(sys, x, grid, seed, N, lambda b: phi(b.terminal)), grid.h)


def estimate_semigroup_girsanov(sys: LinearSystem, phi: TestFunction, x, t: float, N: int,
                                sampler: str = EXACT, seed: int = 0, steps: int = DEFAULT_STEPS,
                                kind: str = MINIMAL_ENERGY, ctrl: ControlKernel | None = None,
                                sign: int = -1) -> EstimateReport:
    """P_t phi(x) as E phi(X^0(t)) M_{-u(t,x,.)}(t): simulate from 0 and reweight."""
    _check_sampler(sampler)
    if N < 100:
        raise ValueError("N must be at least 100")
    ctrl = ctrl if ctrl is not None else build_control(sys, t, kind)
    x = np.asarray(x, dtype=float)
    zero = np.zeros(sys.d)
    if sampler == EXACT:
        s = ExactTerminalSampler(sys, zero, t, ctrl, [x])
        J_xx = s.J[0, 0]
        rep = _report(
            _exact_blocks(s, N, seed, lambda X, I: phi(X) * W.density_from_terminal(I[:, 0], J_xx, sign)),
            0.0,
        )
    else:
        grid = TimeGrid(t, steps)
        rep = _report(
            _grid_blocks(sys, zero, grid, seed, N,
                         lambda b: phi(b.terminal) * W.girsanov_density(b, ctrl, x, sign)),
            grid.h,
        )
    rep.extra["control_energy"] = ctrl.energy(x)
    return rep


def derivative_bound(ctrl: ControlKernel, phi: TestFunction, directions):
    """||U(t)||^n sup|phi| prod ||y_j||, or None for unbounded phi."""
    if not phi.bounded:
        return None
    Y = np.asarray(directions, dtype=float).reshape(-1, ctrl.sys.d)
    return ctrl.operator_norm() ** Y.shape[0] * phi.sup_abs * float(np.prod(np.linalg.norm(Y, axis=1)))


def estimate_derivative(sys: LinearSystem, phi: TestFunction, x, t: float, directions, N: int,
                        sampler: str = EXACT, seed: int = 0, steps: int = DEFAULT_STEPS,
                        kind: str = MINIMAL_ENERGY, ctrl: ControlKernel | None = None,
                        weight_sign: float = 1.0) -> EstimateReport:
    """D^n P_t phi(x)[y_1..y_n] as E phi(X^x(t)) (-1)^n I^n_t(y_1..y_n).

    ``weight_sign`` multiplies the weight; it exists only so that verification
    runs can inject a deliberately wrong sign.
    """
    _check_sampler(sampler)
    if N < 100:
        raise ValueError("N must be at least 100")
    Y = np.asarray(directions, dtype=float).reshape(-1, sys.d)
    n = Y.shape[0]
    if n > W.MAX_ORDER:
        raise CapacityError(f"order {n} exceeds the cap of {W.MAX_ORDER}")
    ctrl = ctrl if ctrl is not None else build_control(sys, t, kind)
    sign = (-1.0) ** n * weight_sign
    if sampler == EXACT:
        s = ExactTerminalSampler(sys, x, t, ctrl, Y)
        J = s.J
        rep = _report(_exact_blocks(s, N, seed, lambda X, I: phi(X) * (sign * W.wick_weight(I, J))), 0.0)
    else:
        grid = TimeGrid(t, steps)

        def weighted(batch):
            w = W.nfold(batch, ctrl, Y) if n else 1.0
            return phi(batch.terminal) * (sign * w)

        rep = _report(_grid_blocks(sys, x, grid, seed, N, weighted), grid.h)
    rep.bound = derivative_bound(ctrl, phi, Y)
    rep.extra["order"] = n
    return rep


# Closed-form Gaussian oracles ------------------------------------------------


def _sqrt_cov(cov):
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def _gauss_hermite_expectation(f, mean, cov, nodes=GH_NODES):
    """E f(X) for X ~ N(mean, cov) by tensor Gauss-Hermite quadrature."""
    d = mean.size
    if d > 2:
        raise UnsupportedFunctionError("tensor Gauss-Hermite fallback is limited to d <= 2")
    z, w = np.polynomial.hermite.hermgauss(nodes)
    z = z * math.sqrt(2.0)
    w = w / math.sqrt(math.pi)
    grids = np.meshgrid(*([z] * d), indexing="ij")
    Z = np.stack([g.reshape(-1) for g in grids], axis=-1)
    wts = np.ones(Z.shape[0])
    for g in np.meshgrid(*([w] * d), indexing="ij"):
        wts = wts * g.reshape(-1)
    X = mean + Z @ _sqrt_cov(cov).T
    return float(np.sum(wts * f(X)))


def _projection_hermite(g, mu, sd, nodes=GH_NODES):
    """E g(mu + sd Z) for scalar standard normal Z."""
    z, w = np.polynomial.hermite.hermgauss(nodes)
    return float(np.sum(w * g(mu + sd * math.sqrt(2.0) * z)) / math.sqrt(math.pi))


def _poly_moments(phi, mean, cov):
    total = 0.0
    for coef, exps in phi.terms:
        idx = [i for i, e in enumerate(exps) for _ in range(e)]
        if len(idx) == 0:
            total += coef
        elif len(idx) == 1:
            total += coef * mean[idx[0]]
        else:
            i, j = idx
            total += coef * (cov[i, j] + mean[i] * mean[j])
    return total


def _expect(phi: TestFunction, mean, cov):
    if phi.kind == POLYNOMIAL:
        if phi.degree <= 2:
            return _poly_moments(phi, mean, cov)
        return _gauss_hermite_expectation(phi, mean, cov)
    if phi.kind == INDICATOR:
        mu = float(phi.c @ mean) - phi.tau
        var = float(phi.c @ cov @ phi.c)
        if var <= 0.0:
            return float(mu >= 0.0)
        return float(stats.norm.cdf(mu / math.sqrt(var)))
    if phi.kind == GAUSSIAN_BUMP:
        d = mean.size
        w2 = phi.width**2
        S = cov + w2 * np.eye(d)
        delta = mean - phi.center
        sign, logdet = np.linalg.slogdet(S)
        quad = float(delta @ np.linalg.solve(S, delta))
        return float(math.exp(0.5 * d * math.log(w2) - 0.5 * logdet - 0.5 * quad))
    if phi.kind == TANH_RIDGE:
        mu = float(phi.c @ mean) - phi.tau
        sd = math.sqrt(max(float(phi.c @ cov @ phi.c), 0.0))
        return _projection_hermite(np.tanh, mu, sd)
    raise UnsupportedFunctionError(f"no oracle for {phi.kind}")


def oracle_semigroup(sys: LinearSystem, phi: TestFunction, x, t: float) -> float:
    """E phi(X^x(t)) in closed form against the Gaussian transition law.

    Polynomials of degree <= 2 use the first two moments, indicators the
    normal CDF of <c, X>, bumps the Gaussian convolution, and ridges a 1-D
    Gauss-Hermite rule on the projection.  Higher-degree polynomials fall
    back to tensor Gauss-Hermite quadrature (128 nodes per axis, d <= 2).
    """
    mom = transition_moments(sys, x, t)
    return _expect(phi, mom.mean, mom.cov)


def oracle_derivative(sys: LinearSystem, phi: TestFunction, x, t: float, directions) -> float:
    """Exact D^n of x -> oracle_semigroup for n <= 2.

    Only the mean S(t)x + const depends on x, so each direction y enters
    through v = S(t) y.
    """
    Y = np.asarray(directions, dtype=float).reshape(-1, sys.d)
    n = Y.shape[0]
    if n > 2:
        raise CapacityError("derivative oracle supports n <= 2")
    if n == 0:
        return oracle_semigroup(sys, phi, x, t)
    mom = transition_moments(sys, x, t)
    V = Y @ semigroup(sys, t).T
    mean, cov = mom.mean, mom.cov

    if phi.kind == POLYNOMIAL:
        p = phi
        for v in V:
            p = p.directional_polynomial(v)
        return _expect(p, mean, cov)

    if phi.kind == INDICATOR:
        mu = float(phi.c @ mean) - phi.tau
        var = float(phi.c @ cov @ phi.c)
        if var <= 0.0:
            raise UnsupportedFunctionError("indicator of a degenerate projection is not differentiable")
        sd = math.sqrt(var)
        z = mu / sd
        cv = V @ phi.c
        pdf = stats.norm.pdf(z)
        if n == 1:
            return float(pdf / sd * cv[0])
        return float(-z * pdf / var * cv[0] * cv[1])

    if phi.kind == GAUSSIAN_BUMP:
        d = mean.size
        S = cov + phi.width**2 * np.eye(d)
        P = np.linalg.inv(S)
        g = P @ (mean - phi.center)
        F = _expect(phi, mean, cov)
        if n == 1:
            return float(-F * (g @ V[0]))
        return float(F * ((g @ V[0]) * (g @ V[1]) - V[0] @ P @ V[1]))

    if phi.kind == TANH_RIDGE:
        mu = float(phi.c @ mean) - phi.tau
        sd = math.sqrt(max(float(phi.c @ cov @ phi.c), 0.0))
        cv = V @ phi.c
        if n == 1:
            g = lambda u: 1.0 / np.cosh(u) ** 2  # noqa: E731
            return _projection_hermite(g, mu, sd) * float(cv[0])
        g2 = lambda u: -2.0 * np.tanh(u) / np.cosh(u) ** 2  # noqa: E731
        return _projection_hermite(g2, mu, sd) * float(cv[0] * cv[1])
    raise UnsupportedFunctionError(f"no derivative oracle for {phi.kind}")


# Cross-checks and diagnostics ------------------------------------------------


def finite_difference_check(sys: LinearSystem, phi: TestFunction, x, t: float, y, N: int,
                            seed: int = 0, eps=(1e-1, 1e-2, 1e-3), kind: str = MINIMAL_ENERGY,
                            k_se: float = 3.0):
    """Central differences of P_t phi with common random numbers vs the weight estimator.

    The two exact samplers at x + eps y and x - eps y share their seed, so the
    difference quotient has no noise from independent draws.  The two smallest
    step sizes are Richardson-extrapolated; the derivative estimator runs on
    an independent seed and the two are compared within ``k_se`` combined
    standard errors.
    """
    if phi.kind == INDICATOR:
        raise UnsupportedFunctionError("finite differences need a smooth test function")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    eps = sorted((float(e) for e in eps), reverse=True)
    if len(eps) < 2:
        raise ValueError("need at least two step sizes")
    quotients = []
    for e in eps:
        plus = ExactTerminalSampler(sys, x + e * y, t).sample(N, seed).x_T
        minus = ExactTerminalSampler(sys, x - e * y, t).sample(N, seed).x_T
        quotients.append((phi(plus) - phi(minus)) / (2.0 * e))
    e1, e2 = eps[-2], eps[-1]
    richardson = (e1**2 * quotients[-1] - e2**2 * quotients[-2]) / (e1**2 - e2**2)
    fd = Moments.of(richardson)
    est = estimate_derivative(sys, phi, x, t, [y], N, EXACT, seed + 1, kind=kind)
    combined = math.sqrt(fd.std_error**2 + est.std_error**2)
    gap = abs(fd.mean - est.value)
    return {
        "eps": eps,
        "central": [float(np.mean(q)) for q in quotients],
        "central_se": [Moments.of(q).std_error for q in quotients],
        "richardson": fd.mean,
        "richardson_se": fd.std_error,
        "estimate": est.value,
        "estimate_se": est.std_error,
        "combined_se": combined,
        "gap": gap,
        "agree": bool(gap <= k_se * combined + 1e-12),
    }


def equivalence_diagnostic(sys: LinearSystem, x, t: float, N: int, seed: int = 0,
                           kind: str = MINIMAL_ENERGY, projection=None):
    """Numerical check that the laws of X^x(t) and X^0(t) are equivalent.

    Draws X^0(t) together with I_t(x) and reports

    * the mean of the analytic density ratio N(m_x, G)/N(m_0, G) at X^0(t),
      which should be 1;
    * the mean of the Girsanov weight M = exp(-I_t(x) - J_t(x,x)/2);
    * a two-sample Kolmogorov-Smirnov distance between the M-weighted
      projections <c, X^0(t)> and independent direct draws <c, X^x(t)>.
      The 1% critical value is 1.63 sqrt(1/N + 1/ESS) with ESS the Kish
      effective size of the weights.
    """
    x = np.asarray(x, dtype=float)
    ctrl = build_control(sys, t, kind)
    zero = np.zeros(sys.d)
    sampler = ExactTerminalSampler(sys, zero, t, ctrl, [x])
    draw = sampler.sample(N, seed)
    m0 = transition_moments(sys, zero, t).mean
    mx = transition_moments(sys, x, t).mean
    G = sampler.cov[:sys.d, :sys.d]
    delta = mx - m0
    if np.any(delta):
        sol = np.linalg.lstsq(G, delta, rcond=None)[0]
        log_ratio = (draw.x_T - m0) @ sol - 0.5 * float(delta @ sol)
        ratio = np.exp(log_ratio)
    else:
        ratio = np.ones(N)
    J_xx = sampler.J[0, 0]
    M = W.density_from_terminal(draw.I[:, 0], J_xx, -1)
    rm = Moments.of(ratio)
    mm = Moments.of(M)

    if projection is None:
        projection = delta if np.any(delta) else np.eye(sys.d)[0]
    c = np.asarray(projection, dtype=float)
    c = c / np.linalg.norm(c)
    direct = ExactTerminalSampler(sys, x, t).sample(N, seed + 1).x_T @ c
    weighted = draw.x_T @ c
    ks = _weighted_ks(weighted, M, direct)
    ess = float(M.sum() ** 2 / np.sum(M * M))
    threshold = 1.63 * math.sqrt(1.0 / N + 1.0 / ess)
    return {
        "ratio_mean": rm.mean,
        "ratio_se": rm.std_error,
        "ratio_ok": bool(abs(rm.mean - 1.0) <= 3.0 * rm.std_error + 1e-12),
        "density_mean": mm.mean,
        "density_se": mm.std_error,
        "density_ok": bool(abs(mm.mean - 1.0) <= 3.0 * mm.std_error + 1e-12),
        "control_energy": float(J_xx),
        "ks_statistic": ks,
        "ks_threshold": threshold,
        "effective_sample_size": ess,
        "ks_ok": bool(ks <= threshold),
    }


def _weighted_ks(a, wa, b):
    """sup |F_a,w - F_b| with self-normalized weights on the first sample."""
    order = np.argsort(a)
    a, wa = a[order], wa[order] / wa.sum()
    b = np.sort(b)
    pts = np.concatenate([a, b])
    Fa = np.concatenate([[0.0], np.cumsum(wa)])[np.searchsorted(a, pts, side="right")]
    Fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(Fa - Fb)))


def gradient_decay(sys: LinearSystem, phi: TestFunction, times, x=None, y=None, N: int = 20000,
                   seed: int = 0, kind: str = MINIMAL_ENERGY):
    """Estimated |D P_t phi(x)[y]| and the bound ||U(t)|| sup|phi| ||y|| over times.

    Requires a bounded phi and a system with vanishing control energy.
    """
    if not phi.bounded:
        raise UnsupportedFunctionError("gradient decay needs a bounded test function")
    times = np.asarray(times, dtype=float)
    fit = scaling_fit(sys, times, kind)
    if not fit.vanishing_energy:
        raise NullGradError("control energy does not vanish over the given times")
    x = np.zeros(sys.d) if x is None else np.asarray(x, dtype=float)
    y = np.eye(sys.d)[0] if y is None else np.asarray(y, dtype=float)
    rows = []
    for t in times:
        rep = estimate_derivative(sys, phi, x, t, [y], N, EXACT, seed, kind=kind)
        rows.append({"t": float(t), "estimate": rep.value, "std_error": rep.std_error,
                     "abs_estimate": abs(rep.value), "bound": rep.bound})
    bounds = np.array([r["bound"] for r in rows])
    return {
        "rows": rows,
        "slope": fit.slope,
        "bound_decreasing": bool(np.all(np.diff(bounds[len(bounds) // 2:]) < 0)),
        "within_bound": all(r["abs_estimate"] <= r["bound"] + 3.0 * r["std_error"] for r in rows),
    }
