"""Run configuration: TOML text, strict schema, aggregated validation.

A config file has top-level run keys and one table per concern::

    experiment = "theorem"
    seed = 7

    [system]
    name = "cylinder"
    perturbation = "constant"
    k = [1.0, 0.0, 0.0]

    [chart]
    r_min = 0.5

    [run]
    epsilon = [0.2, 0.1, 0.05]
    t = [1.0]

Every key is listed in :data:`SCHEMA`; anything else is an error.  All
violations are collected before :class:`ValidationError` is raised.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import tomli

from .errors import ParseError, ValidationError

__all__ = ["RunConfig", "parse_config", "load_config", "apply_overrides", "SCHEMA", "EXPERIMENTS"]

EXPERIMENTS = ("simulate", "average", "coupled-error", "theorem", "exit-prob", "lyapunov", "delta")
_ALIASES = {"leaf-average": "average"}
SYSTEMS = ("cylinder", "sphere", "line")
PERTURBATIONS = {"cylinder": ("constant", "vertical", "linear"), "sphere": ("constant", "radial", "linear"), "line": ("unit",)}
U64 = 2**64


class _Key:
    def __init__(self, kind, default=None, check=None, msg="", choices=None, length=None):
        self.kind = kind
        self.default = default
        self.check = check
        self.msg = msg
        self.choices = choices
        self.length = length


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


SCHEMA: Dict[str, Dict[str, _Key]] = {
    "": {
        "experiment": _Key("str", None, choices=EXPERIMENTS + tuple(_ALIASES)),
        "seed": _Key("int", None, lambda x: 0 <= x < U64, "must be an unsigned 64-bit integer"),
        "out": _Key("str", "runs"),
        "tag": _Key("str", None),
        "threads": _Key("threads", 1),
    },
    "system": {
        "name": _Key("str", "cylinder", choices=SYSTEMS),
        "perturbation": _Key("str", None),
        "lambda1": _Key("float", 1.0),
        "lambda2": _Key("float", 1.0),
        "sigma": _Key("float", 1.0, _pos, "must be positive"),
        "k": _Key("floats", None),
        "x0": _Key("floats", None),
    },
    "chart": {
        "r_min": _Key("float", 0.5, _nonneg, "must be nonnegative"),
        "r_max": _Key("float", 1.5, _pos, "must be positive"),
        "z_min": _Key("float", -1.0),
        "z_max": _Key("float", 1.0),
        "w_min": _Key("float", -1.0),
        "w_max": _Key("float", 1.0),
    },
    "run": {
        "epsilon": _Key("floats", (0.2, 0.1, 0.05), _nonneg, "entries must be >= 0"),
        "t": _Key("floats", (1.0,), _pos, "entries must be > 0"),
        "p": _Key("float", 2.0, lambda x: x >= 1, "must be >= 1"),
        "replicas": _Key("int", 400, lambda x: x >= 2, "must be >= 2 (confidence intervals need two replicas)"),
        "h_slow": _Key("float", 1e-2, _pos, "must be positive"),
        "dt_max": _Key("float", 1e-2, _pos, "must be positive"),
        "dt": _Key("float", 1e-2, _pos, "must be positive"),
        "scheme": _Key("str", "auto", choices=("auto", "heun", "exact_leaf")),
        "block_size": _Key("int", 64, lambda x: x >= 1, "must be >= 1"),
    },
    "coupled": {
        "observable": _Key("str", "pi1"),
        "envelope": _Key("str", "none", choices=("none", "lemma21", "cor22", "cor23")),
        "expect": _Key("str", "accept", choices=("accept", "reject")),
        "slope_min": _Key("float", None),
        "slope_max": _Key("float", None),
        "growth_tol": _Key("float", 0.5, _pos, "must be positive"),
    },
    "theorem": {
        "alpha": _Key("float", 0.9, lambda x: 0 < x < 1, "must lie in (0, 1)"),
        "beta": _Key("float", 0.4, lambda x: 0 < x < 0.5, "must lie in (0, 1/2)"),
        "eta_replicas": _Key("int", 64, lambda x: x >= 2, "must be >= 2"),
        "eta_horizon": _Key("float", 400.0, _pos, "must be positive"),
        "monotone": _Key("str", "separated", choices=("separated", "no_inversion")),
        "zero_tol": _Key("float", 1e-10, _nonneg, "must be nonnegative"),
    },
    "exit": {
        "gamma": _Key("float", 0.25, _pos, "must be positive"),
        "t_gamma": _Key("float", None, _pos, "must be positive"),
        "max_horizon": _Key("float", 100.0, _pos, "must be positive"),
    },
    "lyapunov": {
        "horizon": _Key("float", 1000.0, _pos, "must be positive"),
        "qr_every": _Key("int", 10, lambda x: x >= 1, "must be >= 1"),
        "top_rate": _Key("float", None),
        "top_tol": _Key("float", 0.01, _pos, "must be positive"),
        "transversal_max": _Key("float", None),
    },
    "delta": {
        "s": _Key("float", 0.0, _nonneg, "must be >= 0"),
        "component": _Key("int", 0, _nonneg, "must be >= 0"),
    },
    "average": {
        "source": _Key("str", "quadrature", choices=("quadrature", "closed_form", "time_average")),
        "grid": _Key("int", 64, lambda x: x >= 2, "must be >= 2"),
        "nodes": _Key("int", 64, lambda x: x >= 2, "must be >= 2"),
        "tol": _Key("float", 1e-8, _pos, "must be positive"),
    },
}

# keys that change where or how fast a run happens but not what it computes
_NOT_HASHED = {("", "out"), ("", "tag"), ("", "threads")}


def _coerce(kind, value, where, errors, length=None):
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{where}: expected a number, got {value!r}")
            return None
        value = float(value)
        if not math.isfinite(value):
            errors.append(f"{where}: must be finite")
            return None
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{where}: expected an integer, got {value!r}")
            return None
        return value
    if kind == "str":
        if not isinstance(value, str):
            errors.append(f"{where}: expected a string, got {value!r}")
            return None
        return value
    if kind == "floats":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, (list, tuple)) or not value:
            errors.append(f"{where}: expected a non-empty list of numbers, got {value!r}")
            return None
        out = []
        for i, v in enumerate(value):
            c = _coerce("float", v, f"{where}[{i}]", errors)
            if c is None:
                return None
            out.append(c)
        return tuple(out)
    if kind == "threads":
        if value == "auto":
            return "auto"
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            errors.append(f"{where}: expected a positive integer or 'auto', got {value!r}")
            return None
        return value
    raise AssertionError(kind)


@dataclass(frozen=True, eq=False)
class RunConfig:
    """A validated run.  ``sections`` holds every table with defaults filled in."""

    experiment: str
    seed: int
    sections: Dict[str, Dict[str, Any]]

    def __getitem__(self, section):
        return self.sections[section]

    @property
    def system(self):
        return self.sections["system"]

    @property
    def chart(self):
        return self.sections["chart"]

    @property
    def run(self):
        return self.sections["run"]

    @property
    def out(self):
        return self.sections[""]["out"]

    @property
    def threads(self):
        t = self.sections[""]["threads"]
        return (os.cpu_count() or 1) if t == "auto" else int(t)

    def canonical(self):
        """Resolved config as a plain dict, without output and scheduling keys."""
        d = {sec: {k: v for k, v in vals.items() if (sec, k) not in _NOT_HASHED} for sec, vals in self.sections.items()}
        d[""]["experiment"] = self.experiment
        d[""]["seed"] = self.seed
        return d

    def config_hash(self):
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @property
    def tag(self):
        return self.sections[""]["tag"] or self.config_hash()[:12]


def _split(raw):
    """Separate top-level scalars from tables."""
    top = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in raw.items() if isinstance(v, dict)}
    return top, tables


def validate(raw: Dict[str, Any], seed_fallback: Optional[int] = None) -> RunConfig:
    """Validate a parsed mapping; raises :class:`ValidationError` with every violation."""
    errors = []
    top, tables = _split(raw)
    sections: Dict[str, Dict[str, Any]] = {}
    given = {"": top, **tables}
    for name in given:
        if name not in SCHEMA:
            errors.append(f"unknown section [{name}]")
    for sec, keys in SCHEMA.items():
        vals = given.get(sec, {})
        out = {}
        for key in vals:
            if key not in keys:
                errors.append(f"{_where(sec, key)}: unknown key")
        for key, spec in keys.items():
            where = _where(sec, key)
            if key not in vals:
                out[key] = copy.copy(spec.default)
                continue
            v = _coerce(spec.kind, vals[key], where, errors)
            if v is None:
                out[key] = None
                continue
            if spec.choices is not None and v not in spec.choices:
                errors.append(f"{where}: must be one of {', '.join(spec.choices)}, got {v!r}")
            elif spec.check is not None:
                items = v if isinstance(v, tuple) else (v,)
                if not all(spec.check(x) for x in items):
                    errors.append(f"{where}: {spec.msg}, got {vals[key]!r}")
            out[key] = v
        sections[sec] = out
    _cross_checks(sections, errors)
    experiment = sections[""]["experiment"]
    if experiment is None and not any(e.startswith("experiment") for e in errors):
        errors.append("experiment: required")
    seed = sections[""]["seed"]
    if seed is None:
        seed = seed_fallback if seed_fallback is not None else 0
    if errors:
        raise ValidationError(errors)
    return RunConfig(_ALIASES.get(experiment, experiment), int(seed), sections)


def _where(sec, key):
    return key if not sec else f"{sec}.{key}"


def _cross_checks(s, errors):
    sysc, chart, run = s["system"], s["chart"], s["run"]
    name = sysc["name"]
    if name in PERTURBATIONS:
        kinds = PERTURBATIONS[name]
        if sysc["perturbation"] is None:
            sysc["perturbation"] = kinds[0]
        elif sysc["perturbation"] not in kinds:
            errors.append(f"system.perturbation: must be one of {', '.join(kinds)} for {name}, got {sysc['perturbation']!r}")
        dim = 2 if name == "line" else 3
        for key in ("k", "x0"):
            if sysc[key] is not None and len(sysc[key]) != dim:
                errors.append(f"system.{key}: expected {dim} entries for {name}, got {len(sysc[key])}")
    for lo, hi in (("r_min", "r_max"), ("z_min", "z_max"), ("w_min", "w_max")):
        if chart[lo] is not None and chart[hi] is not None and not chart[lo] < chart[hi]:
            errors.append(f"chart.{lo}: must be below chart.{hi}")
    exp = s[""]["experiment"]
    if exp in ("theorem", "exit-prob", "delta") and run["epsilon"] is not None:
        if any(e <= 0 for e in run["epsilon"]):
            errors.append("run.epsilon: slow-time experiments need epsilon > 0")
    if exp == "theorem" and run["epsilon"] is not None and any(e >= 1 for e in run["epsilon"]):
        errors.append("run.epsilon: the theorem bound needs epsilon < 1")
    obs = s["coupled"]["observable"]
    if obs is not None and not (len(obs) > 1 and obs[:-1] in ("pi", "x") and obs[-1].isdigit() and int(obs[-1]) >= 1):
        errors.append(f"coupled.observable: expected piN or xN (1-based), got {obs!r}")


def parse_config(text: str, seed_fallback: Optional[int] = None) -> RunConfig:
    """Parse and validate config text.

    Raises :class:`ParseError` (with line and column) on malformed text and
    :class:`ValidationError` listing every invalid field.
    """
    return validate(parse_raw(text), seed_fallback)


def parse_raw(text: str) -> Dict[str, Any]:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        raise ParseError(getattr(exc, "msg", str(exc)), line, col) from None


def load_config(path, seed_fallback: Optional[int] = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), seed_fallback)


def apply_overrides(raw: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Set dotted keys (``run.replicas``) in a raw mapping; top-level keys have no dot."""
    raw = copy.deepcopy(raw)
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ValidationError([f"{dotted}: {p} is not a section"])
        node[parts[-1]] = value
    return raw
