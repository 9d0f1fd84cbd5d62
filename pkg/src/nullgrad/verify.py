"""Invariant suite behind ``nullgrad verify``."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import estimate as E
from .config import builtin_system
from .control import (HALF_INTERVAL, INVERTIBLE_B, MINIMAL_ENERGY, build_control,
                      kalman_rank, kolmogorov_coefficient_audit, scaling_fit, verify_null_drive)
from .errors import ControlConstructionError, NotControllableError
from .functions import TestFunction
from .model import LinearSystem
from .paths import ExactTerminalSampler

DEFAULT_BANK = ("kolmogorov", "ou1d", "laplace", "diagonal:modes=20")


@dataclass
class Check:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _timed(name, fn):
    t0 = time.perf_counter()
    passed, detail = fn()
    return Check(name, bool(passed), detail, time.perf_counter() - t0)


def _test_point(sys):
    x = np.zeros(sys.d)
    x[0] = 0.5
    return x


def _null_drive(sys, t=1.0):
    rows = {}
    ok = True
    x = np.linspace(1.0, -0.5, sys.d)
    for kind in (MINIMAL_ENERGY, INVERTIBLE_B, HALF_INTERVAL):
        try:
            ctrl = build_control(sys, t, kind)
        except ControlConstructionError:
            rows[kind] = "not applicable"
            continue
        res = verify_null_drive(sys, x, ctrl, 4000)
        rows[kind] = res
        ok &= res <= 1e-6 * np.linalg.norm(x)
    return ok, rows


def _girsanov(sys, N, seed, t=1.0):
    x = _test_point(sys)
    c = np.ones(sys.d) / math.sqrt(sys.d)
    phi = TestFunction.tanh_ridge(c, 0.1)
    plain = E.estimate_semigroup(sys, phi, x, t, N, seed=seed)
    girs = E.estimate_semigroup_girsanov(sys, phi, x, t, N, seed=seed + 1)
    joint = math.hypot(plain.std_error, girs.std_error)
    gap = abs(plain.value - girs.value)
    return gap <= 3 * joint, {"plain": plain.value, "girsanov": girs.value, "joint_se": joint}


def _derivative_oracle(sys, N, seed, sign, t=1.0):
    x = _test_point(sys)
    c = np.ones(sys.d) / math.sqrt(sys.d)
    phi = TestFunction.tanh_ridge(c, 0.1)
    y = np.eye(sys.d)[-1]
    rep = E.estimate_derivative(sys, phi, x, t, [y], N, seed=seed, weight_sign=sign)
    rep.compare(E.oracle_derivative(sys, phi, x, t, [y]))
    return rep.passed, {"value": rep.value, "oracle": rep.oracle, "z": rep.z_score}


def system_checks(label, sys: LinearSystem, N, seed, sign):
    checks = []
    rep = kalman_rank(sys, 1.0)
    checks.append(Check(f"{label}: rank condition", rep.controllable, rep.to_dict()))
    if not rep.controllable:
        return checks
    checks.append(_timed(f"{label}: null drive", lambda: _null_drive(sys)))
    checks.append(_timed(f"{label}: girsanov representation", lambda: _girsanov(sys, N, seed)))
    checks.append(_timed(f"{label}: derivative vs oracle", lambda: _derivative_oracle(sys, N, seed, sign)))
    return checks


def bank_checks(N, seed, sign):
    checks = []
    kol = builtin_system("kolmogorov")
    lap = builtin_system("laplace")
    ou = builtin_system("ou1d")

    def kalman():
        r = kalman_rank(kol)
        return r.rank == 2 and r.K == 1, r.to_dict()

    def scaling():
        fk = scaling_fit(kol, np.geomspace(0.01, 1.0, 9))
        fl = scaling_fit(lap, np.geomspace(0.01, 1.0, 9))
        ok = abs(fk.slope + 1.5) <= 0.1 and abs(fl.slope + 0.5) <= 1e-6
        return ok, {"kolmogorov_slope": fk.slope, "laplace_slope": fl.slope}

    def ou_first():
        out = {}
        ok = True
        for name, phi, x in (("linear", TestFunction.coordinate(0, 1), [0.0]),
                             ("indicator", TestFunction.indicator([1.0]), [0.0])):
            rep = E.estimate_derivative(ou, phi, x, 1.0, [[1.0]], N, seed=seed, weight_sign=sign)
            rep.compare(E.oracle_derivative(ou, phi, x, 1.0, [[1.0]]))
            ok &= rep.passed
            out[name] = {"value": rep.value, "oracle": rep.oracle, "z": rep.z_score}
        return ok, out

    def ou_second():
        phi = TestFunction.coordinate(0, 1, 2)
        rep = E.estimate_derivative(ou, phi, [0.0], 1.0, [[1.0], [1.0]], N, seed=seed, weight_sign=sign)
        rep.compare(E.oracle_derivative(ou, phi, [0.0], 1.0, [[1.0], [1.0]]), k=4)
        return rep.passed, {"value": rep.value, "oracle": rep.oracle, "z": rep.z_score}

    def bound():
        rng = np.random.default_rng(seed)
        worst = -math.inf
        ok = True
        for _ in range(10):
            phi = TestFunction.tanh_ridge(rng.normal(size=2), rng.normal())
            x = rng.normal(size=2)
            y = rng.normal(size=2)
            rep = E.estimate_derivative(kol, phi, x, 1.0, [y], N, seed=seed, weight_sign=sign)
            margin = abs(rep.value) - rep.bound - 3 * rep.std_error
            worst = max(worst, margin)
            ok &= margin <= 0
        return ok, {"worst_margin": worst}

    def cross_cov():
        out = {}
        ok = True
        for name, sys, y in (("ou1d", ou, [1.0]), ("kolmogorov", kol, [1.0, 0.0])):
            ctrl = build_control(sys, 1.0)
            s = ExactTerminalSampler(sys, np.zeros(sys.d), 1.0, ctrl, [y]).sample(N, seed)
            prod = (s.x_T - s.x_T.mean(0)) * (s.I[:, :1] - s.I[:, 0].mean())
            cov = prod.mean(0)
            se = prod.std(0, ddof=1) / math.sqrt(N)
            target = -np.array([[1.0, 1.0], [0.0, 1.0]]) @ y if sys is kol else -math.exp(-1.0) * np.asarray(y)
            ok &= bool(np.all(np.abs(cov - target) <= 3 * se + 1e-12))
            out[name] = {"cov": cov.tolist(), "target": np.asarray(target).tolist()}
        return ok, out

    def audit():
        rep = kolmogorov_coefficient_audit()
        return rep["linear_solve_drives_to_zero"], {
            "published_drives_to_zero": rep["published_drives_to_zero"],
            "published_residuals": [p["published_residual"] for p in rep["points"]],
        }

    for name, fn in (("kolmogorov kalman rank", kalman), ("small-time scaling", scaling),
                     ("ou1d first derivative", ou_first), ("ou1d second derivative", ou_second),
                     ("kolmogorov derivative bound", bound), ("cross-covariance identity", cross_cov),
                     ("kolmogorov coefficient audit", audit)):
        checks.append(_timed(name, fn))
    return checks


def run_suite(system=None, label=None, N=100_000, seed=0, sabotage=False):
    """Run the invariant suite; ``sabotage`` flips the derivative weight sign."""
    sign = -1.0 if sabotage else 1.0
    checks = []
    if system is None:
        checks += bank_checks(N, seed, sign)
        for entry in DEFAULT_BANK:
            try:
                checks += system_checks(entry, builtin_system(entry), N, seed, sign)
            except NotControllableError as exc:
                checks.append(Check(f"{entry}: rank condition", False, {"error": str(exc)}))
    else:
        checks += system_checks(label or system.label or "system", system, N, seed, sign)
    return {
        "passed": all(c.passed for c in checks),
        "n_checks": len(checks),
        "n_failed": sum(not c.passed for c in checks),
        "seed": seed,
        "sabotage": sabotage,
        "checks": [c.to_dict() for c in checks],
    }
