"""Plain-text experiment configuration: ``key = value`` lines, ``#`` comments, comma lists."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional

from .errors import ParseError, ValidationError

EXPERIMENTS = ("cell", "effective", "solve", "regime", "sp", "expansion", "excess", "lipschitz")
SP_MODES = ("dirichlet_L2", "dirichlet_H1", "periodic_L2", "periodic_H1")
KAPPA_RULES = ("eps2", "eps", "sqrt")

# key -> (kind, attribute)
_KEYS = {
    "experiment": ("str", "experiment"),
    "coeff": ("str", "coeff"),
    "n": ("int", "n"),
    "gamma": ("float", "gamma"),
    "lambda": ("floats", "lam"),
    "eps": ("floats", "eps"),
    "kappa": ("floats", "kappa"),
    "rho": ("float", "rho"),
    "tol": ("float", "tol"),
    "cell_tol": ("float", "cell_tol"),
    "ratio": ("float", "ratio"),
    "grid": ("int", "grid"),
    "p": ("float", "p"),
    "mode": ("str", "mode"),
    "kappa_rules": ("strs", "kappa_rules"),
    "kappa_rule": ("str", "kappa_rule"),
    "radii": ("floats", "radii"),
    "center": ("floats", "center"),
    "R": ("float", "R"),
    "min_points": ("int", "min_points"),
    "out": ("str", "out"),
}

_REQUIRED = {
    "cell": ("lambda",),
    "effective": (),
    "solve": ("eps", "kappa"),
    "regime": ("gamma", "eps"),
    "sp": ("mode", "lambda"),
    "expansion": ("lambda", "eps"),
    "excess": ("eps",),
    "lipschitz": ("eps",),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    coeff: str = "A1"
    n: Optional[int] = None
    gamma: Optional[float] = None
    lam: tuple = ()
    eps: tuple = ()
    kappa: tuple = ()
    rho: Optional[float] = None
    tol: Optional[float] = None
    cell_tol: Optional[float] = None
    ratio: Optional[float] = None
    grid: Optional[int] = None
    p: Optional[float] = None
    mode: Optional[str] = None
    kappa_rules: tuple = ()
    kappa_rule: Optional[str] = None
    radii: tuple = ()
    center: tuple = ()
    R: Optional[float] = None
    min_points: Optional[int] = None
    out: Optional[str] = None
    explicit: tuple = field(default=(), compare=False, repr=False)


def _parse_float(text: str) -> float:
    t = text.strip()
    if t.lower() in ("inf", "infinity"):
        return math.inf
    if "/" in t:
        num, den = t.split("/", 1)
        return float(num) / float(den)
    return float(t)


def _convert(kind: str, raw: str):
    if kind == "str":
        if not raw:
            raise ValueError("empty value")
        return raw
    if kind == "int":
        return int(raw)
    if kind == "float":
        return _parse_float(raw)
    items = [x.strip() for x in raw.split(",")]
    if any(not x for x in items):
        raise ValueError("empty list entry")
    if kind == "floats":
        return tuple(_parse_float(x) for x in items)
    return tuple(items)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; every problem is reported, not only the first."""
    errors: list[str] = []
    values: dict = {}
    seen: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _KEYS:
            errors.append(f"line {lineno}: unknown key '{key}'")
            continue
        if key in seen:
            errors.append(f"line {lineno}: duplicate key '{key}' (first on line {seen[key]})")
            continue
        seen[key] = lineno
        kind, attr = _KEYS[key]
        try:
            values[attr] = _convert(kind, raw)
        except ValueError as exc:
            errors.append(f"line {lineno}: bad value for '{key}': {exc}")
    if errors:
        raise ParseError(errors)
    problems = _validate(values, set(seen))
    if problems:
        raise ValidationError(problems)
    return ExperimentConfig(**values, explicit=tuple(sorted(seen)))


def _validate(values: dict, keys: set) -> list[str]:
    problems = []
    exp = values.get("experiment")
    if exp is None:
        problems.append("missing required key 'experiment'")
    elif exp not in EXPERIMENTS:
        problems.append(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    else:
        for key in _REQUIRED[exp]:
            if key not in keys:
                problems.append(f"experiment '{exp}' requires key '{key}'")
    for key in ("lambda", "eps", "kappa", "radii"):
        attr = _KEYS[key][1]
        vals = values.get(attr)
        if vals is not None and any(not (v > 0) for v in vals):
            problems.append(f"'{key}' entries must be positive")
    lam = values.get("lam")
    if exp == "cell" and lam is not None:
        problems[:] = [p for p in problems if not p.startswith("'lambda'")]
        if any(v < 0 for v in lam):
            problems.append("'lambda' entries must be nonnegative")
    for key in ("gamma", "tol", "cell_tol", "ratio", "p", "R"):
        attr = _KEYS[key][1]
        v = values.get(attr)
        if v is not None and not (v > 0):
            problems.append(f"'{key}' must be positive")
    rho = values.get("rho")
    if rho is not None and not rho >= 0:
        problems.append("'rho' must be nonnegative")
    for key in ("n", "grid", "min_points"):
        v = values.get(_KEYS[key][1])
        if v is not None and v <= 0:
            problems.append(f"'{key}' must be positive")
    n = values.get("n")
    if n is not None and n > 0 and n & (n - 1):
        problems.append("'n' must be a power of two")
    mode = values.get("mode")
    if mode is not None and mode not in SP_MODES:
        problems.append(f"'mode' must be one of {', '.join(SP_MODES)}")
    for rule in values.get("kappa_rules", ()):
        if rule not in KAPPA_RULES:
            problems.append(f"unknown kappa rule '{rule}'")
    rule = values.get("kappa_rule")
    if rule is not None and rule not in KAPPA_RULES + ("shifted",):
        problems.append(f"unknown kappa rule '{rule}'")
    return problems


def _format_value(kind, value) -> str:
    if kind in ("floats", "strs"):
        return ", ".join(_format_value(kind[:-1] if kind == "strs" else "float", v) for v in value)
    if kind == "float":
        return "inf" if math.isinf(value) else repr(float(value))
    return str(value)


def format_config(cfg: ExperimentConfig) -> str:
    """Serialize so that ``parse_config(format_config(c)) == c``."""
    lines = []
    defaults = {f.name: f.default for f in fields(ExperimentConfig)}
    for key, (kind, attr) in _KEYS.items():
        value = getattr(cfg, attr)
        if key != "experiment" and key not in cfg.explicit and value == defaults[attr]:
            continue
        if value is None or value == ():
            continue
        lines.append(f"{key} = {_format_value(kind, value)}")
    return "\n".join(lines) + "\n"
