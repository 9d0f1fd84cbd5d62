"""Command-line front end: ``nullgrad {inspect,control,norms,estimate,verify,replay}``.

Exit codes: 0 success, 2 config error, 3 uncontrollable system, 4 failed
acceptance checks.
"""

from __future__ import annotations

import argparse
import json
import math
import sys as _sys

import numpy as np

from . import estimate as E
from .config import RunManifest, TOOL_VERSION, builtin_config, load_config
from .control import (KINDS, MINIMAL_ENERGY, build_control, format_float, kalman_rank,
                      scaling_fit, verify_null_drive)
from .errors import ConfigError, ControlConstructionError, NotControllableError, NullGradError
from .functions import FUNCTION_KINDS, TestFunction
from .model import gramian
from .paths import DEFAULT_STEPS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNCONTROLLABLE = 3
EXIT_ACCEPTANCE = 4


def _floats(text, what):
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError(f"{what}: empty list")
    return vals


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def parse_phi(text, d):
    """Test function from JSON or shorthand.

    Shorthand forms: ``one``, ``x`` (first coordinate), ``x^2``, ``xi`` and
    ``xi^k`` for coordinate i, ``indicator``, ``tanh``, ``bump``; the ridge
    and indicator kinds use c = e_1 and tau = 0.
    """
    text = text.strip()
    if text.startswith("{"):
        try:
            return TestFunction.from_dict(json.loads(text), d)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad --phi JSON: {exc}") from None
    e1 = np.eye(d)[0]
    if text == "one":
        return TestFunction.constant(1.0, d)
    if text == "indicator":
        return TestFunction.indicator(e1)
    if text == "tanh":
        return TestFunction.tanh_ridge(e1)
    if text == "bump":
        return TestFunction.gaussian_bump(np.zeros(d))
    if text.startswith("x"):
        body, _, power = text[1:].partition("^")
        try:
            i = int(body) - 1 if body else 0
            k = int(power) if power else 1
        except ValueError:
            raise ConfigError(f"bad --phi shorthand {text!r}") from None
        if not 0 <= i < d or k < 0:
            raise ConfigError(f"--phi {text!r} out of range for d={d}")
        return TestFunction.coordinate(i, d, k)
    raise ConfigError(f"unknown --phi {text!r}; use JSON or one of one, x, x^2, xi^k, "
                      f"indicator, tanh, bump (kinds: {', '.join(FUNCTION_KINDS)})")


def _resolve(args):
    if args.config and args.system:
        raise ConfigError("give either --config or --system, not both")
    if args.config:
        return load_config(args.config)
    return builtin_config(args.system or "kolmogorov")


def _vector(args_list, d, what, default=None):
    if args_list is None:
        if default is None:
            raise ConfigError(f"{what} is required")
        return np.asarray(default, dtype=float)
    v = np.asarray(_floats(args_list, what))
    if v.size != d:
        raise ConfigError(f"{what} has {v.size} entries, system has d={d}")
    return v


def _emit(args, text, suffix=""):
    if args.out:
        path = args.out + suffix
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        return [path]
    _sys.stdout.write(text)
    return []


def _write_manifest(args, argv, outputs, t_values):
    if not args.out:
        return
    man = RunManifest(args.command, list(argv), args.config, args.system, getattr(args, "seed", None),
                      getattr(args, "paths", None), list(t_values), outputs)
    with open(args.out + ".manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(man.to_json() + "\n")


# Subcommands -----------------------------------------------------------------


def cmd_inspect(args, sysm):
    t = args.t[0] if args.t else 1.0
    rep = kalman_rank(sysm, t)
    out = rep.to_dict()
    out["d"], out["m"], out["label"] = sysm.d, sysm.m, sysm.label
    out["gramian_spectrum"] = np.linalg.eigvalsh(gramian(sysm, t)).tolist()
    return dumps(out), [t], EXIT_OK


def cmd_control(args, sysm):
    t = args.t[0] if args.t else 1.0
    x = _vector(args.x, sysm.d, "--x", np.eye(sysm.d)[0])
    ctrl = build_control(sysm, t, args.kind)
    nodes = np.linspace(0.0, t, (args.steps or 256) + 1)
    U = ctrl.apply(nodes, x)
    lines = ["s," + ",".join(f"u_{i}" for i in range(sysm.m))]
    for s, row in zip(nodes, U):
        lines.append(",".join(format_float(v) for v in (s, *row)))
    residual = verify_null_drive(sysm, x, ctrl, 4000)
    summary = {"kind": ctrl.kind, "t": t, "x": x, "residual": residual,
               "energy": ctrl.energy(x), "drives_to_zero": residual <= 1e-6 * max(np.linalg.norm(x), 1e-300)}
    if not np.any(x):
        summary["drives_to_zero"] = residual == 0.0
    return "\n".join(lines) + "\n", dumps(summary), [t]


def cmd_norms(args, sysm):
    times = args.t or list(np.geomspace(0.01, 1.0, 9))
    if len(times) == 3 and args.log_range:
        times = list(np.geomspace(times[0], times[1], int(times[2])))
    fit = scaling_fit(sysm, times, args.kind)
    lines = ["t,norm"] + [f"{format_float(t)},{format_float(n)}" for t, n in zip(fit.times, fit.norms)]
    return "\n".join(lines) + "\n", dumps(fit.to_dict()), list(map(float, fit.times))


def cmd_estimate(args, sysm):
    t = args.t[0] if args.t else 1.0
    x = _vector(args.x, sysm.d, "--x", np.zeros(sysm.d))
    phi = parse_phi(args.phi, sysm.d)
    directions = [_vector(y, sysm.d, "--y") for y in (args.y or [])]
    order = args.order if args.order is not None else len(directions)
    if order and not directions:
        directions = [np.eye(sysm.d)[0]] * order
    if len(directions) != order:
        raise ConfigError(f"--order {order} but {len(directions)} --y directions given")
    N = args.paths or 100_000
    steps = args.steps or DEFAULT_STEPS
    sign = -1.0 if args.sabotage else 1.0
    if order == 0 and args.girsanov:
        rep = E.estimate_semigroup_girsanov(sysm, phi, x, t, N, args.sampler, args.seed, steps, args.kind)
        oracle = E.oracle_semigroup(sysm, phi, x, t)
    elif order == 0:
        rep = E.estimate_semigroup(sysm, phi, x, t, N, args.sampler, args.seed, steps)
        oracle = E.oracle_semigroup(sysm, phi, x, t)
    else:
        rep = E.estimate_derivative(sysm, phi, x, t, directions, N, args.sampler, args.seed, steps,
                                    args.kind, weight_sign=sign)
        try:
            oracle = E.oracle_derivative(sysm, phi, x, t, directions)
        except NullGradError:
            oracle = None
    if oracle is not None:
        rep.compare(oracle, k=4 if order == 2 else 3)
    out = rep.to_dict()
    out.update({"t": t, "x": x, "directions": directions, "phi": phi.to_dict(),
                "sampler": args.sampler, "seed": args.seed, "kind": args.kind})
    code = EXIT_ACCEPTANCE if rep.verdict == "fail" else EXIT_OK
    return dumps(out), [t], code


def cmd_verify(args, sysm):
    from .verify import run_suite

    N = args.paths or 100_000
    report = run_suite(sysm, N=N, seed=args.seed, sabotage=args.sabotage)
    for c in report["checks"]:
        _sys.stderr.write(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}\n")
    code = EXIT_OK if report["passed"] else EXIT_ACCEPTANCE
    return dumps(report), [], code


def build_parser():
    p = argparse.ArgumentParser(prog="nullgrad", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"nullgrad {TOOL_VERSION}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, t_many=False):
        sp.add_argument("--config", help="JSON system config")
        sp.add_argument("--system", help="builtin system, e.g. kolmogorov or ou1d:gamma=1,a=2,b=1")
        if t_many:
            sp.add_argument("--t", type=float, nargs="+", help="horizons")
        else:
            sp.add_argument("--t", type=float, nargs=1, help="horizon (default 1)")
        sp.add_argument("--out", help="output path prefix (stdout if omitted)")
        sp.add_argument("--kind", default=MINIMAL_ENERGY, choices=KINDS)
        sp.add_argument("--steps", type=int)

    sp = sub.add_parser("inspect", help="rank, minimal exponent and Gramian spectrum")
    common(sp)
    sp = sub.add_parser("control", help="tabulated null control and drive-to-zero residual")
    common(sp)
    sp.add_argument("--x", help="initial state, comma-separated")
    sp = sub.add_parser("norms", help="||U(t)|| over horizons with a log-log fit")
    common(sp, t_many=True)
    sp.add_argument("--log-range", action="store_true",
                    help="interpret --t T0 T1 COUNT as COUNT log-spaced horizons")
    sp = sub.add_parser("estimate", help="Monte Carlo P_t phi or D^n P_t phi")
    common(sp)
    sp.add_argument("--x", help="initial state")
    sp.add_argument("--y", action="append", help="direction (repeat for higher order)")
    sp.add_argument("--order", type=int)
    sp.add_argument("--phi", default="x", help="test function as JSON or shorthand")
    sp.add_argument("--paths", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--sampler", choices=E.SAMPLERS, default=E.EXACT)
    sp.add_argument("--girsanov", action="store_true", help="use the reweighted estimator for order 0")
    sp.add_argument("--sabotage", action="store_true", help=argparse.SUPPRESS)
    sp = sub.add_parser("verify", help="run the invariant suite")
    sp.add_argument("--config")
    sp.add_argument("--system")
    sp.add_argument("--out")
    sp.add_argument("--paths", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--sabotage", action="store_true", help="flip the derivative weight sign")
    sp = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    sp.add_argument("manifest")
    return p


def main(argv=None):
    argv = list(_sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        try:
            with open(args.manifest, encoding="utf-8") as fh:
                man = RunManifest.from_json(fh.read())
        except (OSError, ValueError, TypeError) as exc:
            _sys.stderr.write(f"error: cannot read manifest: {exc}\n")
            return EXIT_CONFIG
        return main(man.argv)
    try:
        if args.command == "verify" and not (args.config or args.system):
            sysm = None
        else:
            sysm = _resolve(args).to_system()
        if args.command == "inspect":
            text, t_values, code = cmd_inspect(args, sysm)
            outputs = _emit(args, text, ".json")
        elif args.command in ("control", "norms"):
            fn = cmd_control if args.command == "control" else cmd_norms
            csv, summary, t_values = fn(args, sysm)
            outputs = _emit(args, csv, ".csv")
            if args.out:
                outputs += _emit(args, summary, ".json")
            else:
                _sys.stdout.write(summary)
            code = EXIT_OK
        elif args.command == "estimate":
            text, t_values, code = cmd_estimate(args, sysm)
            outputs = _emit(args, text, ".json")
        else:
            text, t_values, code = cmd_verify(args, sysm)
            outputs = _emit(args, text, ".json")
        _write_manifest(args, argv, outputs, t_values)
        return code
    except ConfigError as exc:
        _sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except NotControllableError as exc:
        _sys.stderr.write(f"not controllable: {exc}\n")
        return EXIT_UNCONTROLLABLE
    except ControlConstructionError as exc:
        _sys.stderr.write(f"control error: {exc}\n")
        return EXIT_CONFIG
    except NullGradError as exc:
        _sys.stderr.write(f"error: {exc}\n")
        return EXIT_ACCEPTANCE
    except ValueError as exc:
        _sys.stderr.write(f"invalid input: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
