"""The ``key = value`` configuration dialect and scenario construction.

A config file is a sequence of ``[section]`` headers, each followed by
``key = value`` lines.  ``#`` starts a comment.  Every error carries the line
number it refers to.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .constitutive import make_coefficient_set
from .errors import ConfigError
from .mesh import generate_rect_mesh, read_mesh
from .stepper import Scenario, SolverOptions

__all__ = ["Config", "parse_config", "parse_config_text", "build_scenario", "eval_expression", "SCHEMA"]

_FLOAT, _INT, _BOOL, _STR, _EXPR, _MARK, _FLOATS = "float", "int", "bool", "str", "expr", "marker", "floats"

SCHEMA = {
    "mesh": {"nx": _INT, "ny": _INT, "lx": _FLOAT, "ly": _FLOAT, "file": _STR,
             "left": _MARK, "right": _MARK, "bottom": _MARK, "top": _MARK, "test_mode": _BOOL},
    "coefficients": {"b": _STR, "a": _STR, "dw": _STR, "lambda": _STR, "b2": _FLOAT, "rho": _FLOAT},
    "time": {"tau": _FLOAT, "t_end": _FLOAT},
    "boundary": {"g_u": _FLOAT, "g_w": _FLOAT, "g_theta": _FLOAT},
    "initial": {"u0": _EXPR, "w0": _EXPR, "theta0": _EXPR},
    "solver": {"newton_rtol": _FLOAT, "newton_max_iter": _INT, "lin_rtol": _FLOAT,
               "lin_max_iter": _INT, "upwind": _BOOL},
    "output": {"dir": _STR, "snapshot_every": _INT, "check_invariants": _STR,
               "overshoot_tol": _FLOAT, "overshoot_tol_u": _FLOAT},
    "mms": {"case": _STR, "h_list": _FLOATS, "tau0": _FLOAT, "t_end_space": _FLOAT,
            "h_fine": _FLOAT, "tau_list": _FLOATS, "t_end_time": _FLOAT,
            "min_order_space": _FLOAT, "min_order_time": _FLOAT},
}

# keys whose values must lie in (0, 1)
_UNIT_INTERVAL = {("solver", "newton_rtol"), ("solver", "lin_rtol")}
_POSITIVE = {("time", "tau"), ("mesh", "nx"), ("mesh", "ny"), ("mesh", "lx"), ("mesh", "ly"),
             ("solver", "newton_max_iter"), ("solver", "lin_max_iter"), ("output", "snapshot_every"),
             ("mms", "tau0"), ("mms", "h_fine"), ("mms", "t_end_space"), ("mms", "t_end_time")}
_NONNEGATIVE = {("time", "t_end"), ("output", "overshoot_tol"), ("output", "overshoot_tol_u")}

_NAMESPACE = {name: getattr(np, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sinh", "cosh", "arctan", "minimum", "maximum",
    "where", "pi", "e")}


@dataclass
class Config:
    """Typed sections.  ``lines`` maps ``(section, key)`` to the source line."""

    sections: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)
    path: str = "<string>"

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def has(self, section, key=None):
        if key is None:
            return section in self.sections
        return key in self.sections.get(section, {})

    def require(self, section, key):
        if not self.has(section, key):
            raise ConfigError(f"{self.path}: missing required key [{section}] {key}")
        return self.sections[section][key]

    def line(self, section, key):
        return self.lines.get((section, key), 0)

    @property
    def base_dir(self):
        return os.path.dirname(os.path.abspath(self.path)) if self.path != "<string>" else os.getcwd()


def eval_expression(text: str, x, y):
    """Evaluate an initial-data expression in ``x``, ``y`` with a restricted numpy namespace."""
    code = compile(text, "<expr>", "eval")
    for name in code.co_names:
        if name not in _NAMESPACE and name not in ("x", "y"):
            raise ConfigError(f"unknown name {name!r} in expression {text!r}")
    val = eval(code, {"__builtins__": {}}, dict(_NAMESPACE, x=x, y=y))
    return np.broadcast_to(np.asarray(val, dtype=float), np.shape(x)).copy()


def _convert(kind, raw, section, key, lineno):
    where = f"[{section}] {key} (line {lineno})"
    try:
        if kind == _FLOAT:
            val = float(raw)
            if not math.isfinite(val):
                raise ValueError
            return val
        if kind == _INT:
            return int(raw)
        if kind == _FLOATS:
            vals = [float(v) for v in raw.replace(",", " ").split()]
            if not vals:
                raise ValueError
            return vals
    except ValueError:
        raise ConfigError(f"{where}: expected {kind}, got {raw!r}") from None
    if kind == _BOOL:
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    if kind == _MARK:
        if raw not in ("D", "N"):
            raise ConfigError(f"{where}: boundary marker must be D or N, got {raw!r}")
        return raw
    if kind == _EXPR:
        if raw.startswith("file:"):
            return raw
        try:
            eval_expression(raw, np.array([0.5]), np.array([0.5]))
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        except Exception as exc:
            raise ConfigError(f"{where}: cannot evaluate expression: {exc}") from None
        return raw
    return raw


def parse_config_text(text: str, path: str = "<string>") -> Config:
    cfg = Config(path=path)
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header (line {lineno})")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}] (line {lineno})")
            cfg.sections.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value' (line {lineno})")
        if section is None:
            raise ConfigError(f"key outside of any section (line {lineno})")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}] (line {lineno})")
        if key in cfg.sections[section]:
            first = cfg.lines[(section, key)]
            raise ConfigError(f"duplicate key {key!r} in [{section}] (lines {first} and {lineno})")
        val = _convert(SCHEMA[section][key], value, section, key, lineno)
        if (section, key) in _POSITIVE and not val > 0:
            raise ConfigError(f"{key} must be positive (line {lineno})")
        if (section, key) in _NONNEGATIVE and not val >= 0:
            raise ConfigError(f"{key} must be nonnegative (line {lineno})")
        if (section, key) in _UNIT_INTERVAL and not 0 < val < 1:
            raise ConfigError(f"{key} must lie in (0, 1) (line {lineno})")
        cfg.sections[section][key] = val
        cfg.lines[(section, key)] = lineno
    mode = cfg.get("output", "check_invariants")
    if mode is not None and mode not in ("off", "report", "strict"):
        raise ConfigError(f"check_invariants must be off, report or strict "
                          f"(line {cfg.line('output', 'check_invariants')})")
    return cfg


def parse_config(path) -> Config:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        return parse_config_text(text, str(path))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def coefficient_set(cfg: Config):
    if not cfg.has("coefficients"):
        raise ConfigError(f"{cfg.path}: missing [coefficients] section")
    sec = {k: str(v) for k, v in cfg.sections["coefficients"].items()}
    try:
        return make_coefficient_set(sec)
    except ConfigError as exc:
        raise ConfigError(f"{cfg.path}: {exc}") from None


def build_mesh(cfg: Config):
    m = cfg.sections.get("mesh", {})
    if "file" in m:
        path = m["file"]
        if not os.path.isabs(path):
            path = os.path.join(cfg.base_dir, path)
        return read_mesh(path)
    markers = {side: m[side] for side in ("left", "right", "bottom", "top") if side in m}
    return generate_rect_mesh(cfg.require("mesh", "nx"), cfg.require("mesh", "ny"),
                              m.get("lx", 1.0), m.get("ly", 1.0), markers)


def _initial(cfg, key, mesh):
    spec = cfg.get("initial", key, "0")
    if spec.startswith("file:"):
        path = spec[5:].strip()
        if not os.path.isabs(path):
            path = os.path.join(cfg.base_dir, path)
        try:
            vals = np.loadtxt(path, dtype=float, ndmin=1)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"[initial] {key} (line {cfg.line('initial', key)}): cannot read {path}: {exc}") from None
        if vals.shape != (mesh.n_nodes,):
            raise ConfigError(f"[initial] {key} (line {cfg.line('initial', key)}): expected {mesh.n_nodes} "
                              f"nodal values, got {vals.size}")
        return vals
    return eval_expression(spec, mesh.nodes[:, 0], mesh.nodes[:, 1])


def build_scenario(cfg: Config, mesh=None) -> Scenario:
    """Scenario for ``porous run`` (constant Dirichlet data, no sources)."""
    mesh = mesh if mesh is not None else build_mesh(cfg)
    cs = coefficient_set(cfg)
    tau = cfg.require("time", "tau")
    t_end = cfg.require("time", "t_end")
    s = cfg.sections.get("solver", {})
    solver = SolverOptions(
        newton_rtol=s.get("newton_rtol", 1e-9), newton_max_iter=s.get("newton_max_iter", 50),
        lin_rtol=s.get("lin_rtol", 1e-10), lin_max_iter=s.get("lin_max_iter"), upwind=s.get("upwind", False))
    bnd = cfg.sections.get("boundary", {})
    return Scenario(
        mesh, cs, tau, t_end,
        u0=_initial(cfg, "u0", mesh), w0=_initial(cfg, "w0", mesh), theta0=_initial(cfg, "theta0", mesh),
        g_u=bnd.get("g_u", 0.0), g_w=bnd.get("g_w", 0.0), g_theta=bnd.get("g_theta", 0.0),
        solver=solver, test_mode=cfg.get("mesh", "test_mode", False),
        name=os.path.splitext(os.path.basename(cfg.path))[0],
    )
