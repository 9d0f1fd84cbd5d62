"""JSON system configs, the built-in example bank, and run manifests."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .model import LinearSystem

TOOL_VERSION = "0.1.0"


def _matrix_to_json(M, allow_diagonal=True):
    M = np.asarray(M, dtype=float)
    if allow_diagonal and M.shape[0] == M.shape[1] and M.shape[0] > 1 \
            and np.count_nonzero(M - np.diag(np.diag(M))) == 0:
        return {"diagonal": [float(v) for v in np.diag(M)]}
    return [[float(v) for v in row] for row in M]


def _matrix_from_json(value, name):
    if isinstance(value, dict):
        if set(value) != {"diagonal"}:
            raise ConfigError(f"{name}: only the {{'diagonal': [...]}} shorthand is supported")
        diag = np.asarray(value["diagonal"], dtype=float)
        if diag.ndim != 1 or diag.size == 0:
            raise ConfigError(f"{name}: diagonal must be a non-empty list")
        return np.diag(diag)
    try:
        M = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: not a numeric array ({exc})") from None
    if M.ndim == 1:
        M = M.reshape(-1, 1) if name == "B" else M.reshape(1, -1)
    if M.ndim != 2:
        raise ConfigError(f"{name}: expected a row-major 2-D array")
    return M


@dataclass
class FractionalParams:
    """Diagonal surrogate A = diag(-l^2), B = diag(lambda_l^{-r/2}), l = 1..dimension.

    ``lambda_cutoff`` optionally drops modes with lambda_l above the cutoff.
    """

    r: float = 0.5
    dimension: int = 50
    lambda_cutoff: float | None = None

    def eigenvalues(self):
        lam = np.arange(1, int(self.dimension) + 1, dtype=float) ** 2
        if self.lambda_cutoff is not None:
            lam = lam[lam <= self.lambda_cutoff]
        if lam.size == 0:
            raise ConfigError("fractional surrogate has no modes below lambda_cutoff")
        return lam


@dataclass
class SystemConfig:
    label: str
    d: int
    m: int
    A: object
    B: object
    a: list
    fractional: FractionalParams | None = None

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        label = str(obj.get("label", ""))
        if "fractional" in obj:
            fp = obj["fractional"]
            try:
                frac = FractionalParams(float(fp.get("r", 0.5)), int(fp.get("dimension", 50)),
                                        None if fp.get("lambda_cutoff") is None else float(fp["lambda_cutoff"]))
            except (TypeError, ValueError, AttributeError) as exc:
                raise ConfigError(f"bad fractional parameters: {exc}") from None
            d = frac.eigenvalues().size
            return cls(label, d, d, None, None, [0.0] * d, frac)
        for key in ("A", "B"):
            if key not in obj:
                raise ConfigError(f"config is missing {key!r}")
        A = _matrix_from_json(obj["A"], "A")
        B = _matrix_from_json(obj["B"], "B")
        d = A.shape[0]
        a = obj.get("a")
        a = [0.0] * d if a is None else [float(v) for v in np.asarray(a, dtype=float).reshape(-1)]
        cfg = cls(label, d, B.shape[1], A, B, a)
        for key in ("d", "m"):
            if key in obj and int(obj[key]) != getattr(cfg, key):
                raise ConfigError(f"declared {key}={obj[key]} does not match the matrices")
        cfg.to_system()
        return cfg

    @classmethod
    def from_system(cls, sys: LinearSystem):
        return cls(sys.label, sys.d, sys.m, np.array(sys.A), np.array(sys.B), [float(v) for v in sys.a])

    def to_system(self) -> LinearSystem:
        if self.fractional is not None:
            lam = self.fractional.eigenvalues()
            return LinearSystem(np.diag(-lam), np.diag(lam ** (-self.fractional.r / 2.0)), None, self.label)
        try:
            return LinearSystem(self.A, self.B, self.a, self.label)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        if self.fractional is not None:
            return {"label": self.label, "d": self.d, "m": self.m, "fractional": asdict(self.fractional)}
        return {
            "label": self.label,
            "d": self.d,
            "m": self.m,
            "A": _matrix_to_json(self.A),
            "B": _matrix_to_json(self.B),
            "a": [float(v) for v in self.a],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# Built-in bank ---------------------------------------------------------------


def _params(text):
    out = {}
    if not text:
        return out
    for item in text.split(","):
        if "=" not in item:
            raise ConfigError(f"bad builtin parameter {item!r}; expected key=value")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise ConfigError(f"builtin parameter {k!r} is not a number") from None
    return out


def _take(params, defaults, name):
    unknown = set(params) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown parameters for {name!r}: {sorted(unknown)}")
    return {k: params.get(k, v) for k, v in defaults.items()}


def _laplace(p):
    p = _take(p, {"d": 3}, "laplace")
    d = int(p["d"])
    return {"label": "laplace", "A": [[0.0] * d for _ in range(d)], "B": {"diagonal": [0.5] * d}}


def _kolmogorov(p):
    _take(p, {}, "kolmogorov")
    return {"label": "kolmogorov", "A": [[0.0, 1.0], [0.0, 0.0]], "B": [[0.0], [1.0]]}


def _ou1d(p):
    p = _take(p, {"gamma": 1.0, "a": 0.0, "b": 1.0}, "ou1d")
    return {"label": "ou1d", "A": [[-p["gamma"]]], "B": [[p["b"]]], "a": [p["a"]]}


def _diagonal(p):
    p = _take(p, {"modes": 50}, "diagonal")
    j = np.arange(1, int(p["modes"]) + 1, dtype=float)
    return {"label": "diagonal", "A": {"diagonal": (-(j**2)).tolist()}, "B": {"diagonal": (1.0 / j).tolist()}}


def _fractional(p):
    p = _take(p, {"r": 0.5, "dimension": 50, "lambda_cutoff": None}, "fractional")
    return {"label": "fractional", "fractional": p}


BUILTINS = {
    "laplace": _laplace,
    "kolmogorov": _kolmogorov,
    "ou1d": _ou1d,
    "diagonal": _diagonal,
    "fractional": _fractional,
}


def builtin_config(text: str) -> SystemConfig:
    """Bank entry by name, optionally parameterized as ``name:key=value,...``."""
    name, _, rest = text.partition(":")
    if name not in BUILTINS:
        raise ConfigError(f"unknown builtin system {name!r}; choose from {sorted(BUILTINS)}")
    return SystemConfig.from_dict(BUILTINS[name](_params(rest)))


def builtin_system(text: str) -> LinearSystem:
    return builtin_config(text).to_system()


def load_config(path) -> SystemConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return SystemConfig.from_dict(obj)


# Manifests -------------------------------------------------------------------


@dataclass
class RunManifest:
    """Everything needed to rerun a CLI invocation bit for bit."""

    command: str
    argv: list
    config_path: str | None = None
    system: str | None = None
    seed: int | None = None
    N: int | None = None
    t_values: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    tool_version: str = TOOL_VERSION

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls(**obj)


def finite_or_none(v):
    return None if v is None or not math.isfinite(v) else v
