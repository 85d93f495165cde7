"""Scenario configuration: sectioned ``key = value`` files.

Spatial fields (doping, diffusivity, initial and boundary data) are given as
a number or as a named analytic profile, e.g. ``bump(base=1, amp=0.3)``.
Parsing collects every problem before raising, so a single run of
:func:`parse_config` reports all of them.
"""
from __future__ import annotations

import ast
import configparser
import inspect
import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .materials import MaterialParams, MobilityModel, caughey_thomas, constant_saturated, material_violations
from .mesh import Grid2D

MODES = ("transient", "equilibrium", "decay_study", "oracle_compare", "residual_audit")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = errors


# --- profiles -------------------------------------------------------------

def _constant(x, y, lx, ly, value=0.0):
    return np.full_like(x, value)


def _bump(x, y, lx, ly, base=1.0, amp=0.1, width=20.0, x0=0.5, y0=0.5):
    """Gaussian bump; ``x0``, ``y0`` are fractions of the domain size."""
    r2 = ((x / lx - x0) ** 2 + (y / ly - y0) ** 2)
    return base + amp * np.exp(-width * r2)


def _sine(x, y, lx, ly, base=0.0, amp=1.0, kx=1.0, ky=1.0):
    """``base + amp sin(kx pi x/lx) sin(ky pi y/ly)``; vanishes on the boundary for integer modes."""
    return base + amp * np.sin(kx * np.pi * x / lx) * np.sin(ky * np.pi * y / ly)


def _cosine(x, y, lx, ly, base=0.0, amp=1.0, kx=1.0, ky=1.0):
    return base + amp * np.cos(kx * np.pi * x / lx) * np.cos(ky * np.pi * y / ly)


def _linear(x, y, lx, ly, base=0.0, gx=0.0, gy=0.0):
    return base + gx * x / lx + gy * y / ly


def _step(x, y, lx, ly, left=1.0, right=1.0, at=0.5, smooth=0.05):
    """Smoothed step in ``x`` from ``left`` to ``right``."""
    return left + (right - left) * 0.5 * (1.0 + np.tanh((x / lx - at) / smooth))


PROFILE_FUNCS: dict[str, Callable[..., np.ndarray]] = {
    "constant": _constant,
    "bump": _bump,
    "sine": _sine,
    "cosine": _cosine,
    "linear": _linear,
    "step": _step,
}

_CALL = re.compile(r"^\s*([A-Za-z_]\w*)\s*\((.*)\)\s*$")


@dataclass(frozen=True)
class Profile:
    name: str
    args: tuple[tuple[str, float], ...] = ()

    def evaluate(self, grid: Grid2D) -> np.ndarray:
        return PROFILE_FUNCS[self.name](grid.x, grid.y, grid.lx, grid.ly, **dict(self.args))

    @property
    def is_constant(self) -> bool:
        return self.name == "constant"

    @property
    def value(self) -> float:
        return dict(self.args).get("value", 0.0) if self.is_constant else math.nan

    def __str__(self) -> str:
        if self.is_constant:
            return repr(float(self.value))
        inner = ", ".join(f"{k}={v!r}" for k, v in self.args)
        return f"{self.name}({inner})"


def parse_profile(text: str) -> Profile:
    text = text.strip()
    try:
        return Profile("constant", (("value", float(text)),))
    except ValueError:
        pass
    m = _CALL.match(text)
    if not m:
        raise ValueError(f"cannot parse profile {text!r}")
    name, body = m.group(1), m.group(2)
    if name not in PROFILE_FUNCS:
        raise ValueError(f"unknown profile {name!r}; known: {sorted(PROFILE_FUNCS)}")
    args = []
    if body.strip():
        try:
            call = ast.parse(f"f({body})", mode="eval").body
        except SyntaxError:
            raise ValueError(f"cannot parse arguments of {text!r}") from None
        if call.args:
            raise ValueError(f"profile {name!r} takes keyword arguments only")
        for kw in call.keywords:
            try:
                args.append((kw.arg, float(ast.literal_eval(kw.value))))
            except (ValueError, TypeError):
                raise ValueError(f"argument {kw.arg!r} of {name!r} must be a number") from None
    allowed = set(inspect.signature(PROFILE_FUNCS[name]).parameters) - {"x", "y", "lx", "ly"}
    bad = [k for k, _ in args if k not in allowed]
    if bad:
        raise ValueError(f"profile {name!r} has no parameter(s) {bad}; allowed: {sorted(allowed)}")
    return Profile(name, tuple(args))


# --- schema ---------------------------------------------------------------

def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float(text: str) -> float:
    return float(text)


def _intlist(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in text.split(",") if s.strip())


def _str(text: str) -> str:
    return text.strip()


def _optfloat(text: str):
    t = text.strip()
    return None if t.lower() in ("", "none", "auto") else float(t)


_P = parse_profile
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "grid": {"nx": (int, 33), "ny": (int, 33), "lx": (_float, 1.0), "ly": (_float, 1.0)},
    "time": {"h": (_float, 1e-3), "T": (_float, 0.1), "snapshot_every": (int, 0), "record_every": (int, 1)},
    "material": {"D": (_P, _P("1.0")), "p": (_P, _P("0.0")), "C": (_P, _P("2.0")),
                 "tau": (_float, math.inf), "gamma": (_float, 0.0), "lambdaD": (_float, 1.0)},
    "mobility": {"kind": (_str, "caughey_thomas"), "mu0": (_float, 1.0), "vsat": (_float, 1.0)},
    "llg": {"profile": (_str, "constant"), "theta": (_float, 0.0), "phi": (_float, 0.0),
            "amplitude": (_float, 0.5), "frozen": (_bool, True), "cap_factor": (_float, 0.1)},
    "initial": {"n0": (_P, _P("1.0")), "n1": (_P, _P("0.0")), "n2": (_P, _P("0.0")), "n3": (_P, _P("0.0"))},
    "boundary": {"n0": (_P, _P("1.0")), "n1": (_P, _P("0.0")), "n2": (_P, _P("0.0")), "n3": (_P, _P("0.0")),
                 "V": (_P, _P("0.0"))},
    "solver": {"fp_tol": (_float, 1e-9), "fp_max": (int, 50), "damping": (_float, 1.0),
               "averaging": (_str, "arithmetic"), "linear_solver": (_str, "auto"), "max_halvings": (int, 4)},
    "audit": {"c0": (_optfloat, None), "c": (_optfloat, None)},
    "run": {"mode": (_str, "transient"), "equilibrium_form": (_str, "flux")},
    "decay": {"window": (_float, 0.05), "require_fit": (_bool, True), "threshold_bisect": (_bool, False),
              "vsat_lo": (_float, 0.01), "vsat_hi": (_float, 10.0), "bisect_iters": (int, 6)},
    "equilibrium": {"check_stationary": (_bool, True), "stationary_tol": (_float, 1e-8)},
    "oracle": {"tolerance": (_float, 1e-6)},
    "residual": {"grids": (_intlist, (17, 33, 65)), "min_order": (_float, 0.9), "margin": (int, 2)},
    "output": {"dir": (_str, "runs/default")},
}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if value is None:
        return "auto"
    return str(value)


@dataclass
class ScenarioConfig:
    values: dict[str, dict[str, Any]] = field(default_factory=dict)

    def __getitem__(self, dotted: str):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]

    def section(self, name: str) -> dict[str, Any]:
        return self.values[name]

    @property
    def mode(self) -> str:
        return self.values["run"]["mode"]

    @property
    def grid(self) -> Grid2D:
        g = self.values["grid"]
        return Grid2D(g["nx"], g["ny"], g["lx"], g["ly"])

    def material(self, grid: Grid2D | None = None) -> MaterialParams:
        grid = grid or self.grid
        m = self.values["material"]
        return MaterialParams(grid, D=m["D"].evaluate(grid), p=m["p"].evaluate(grid), C=m["C"].evaluate(grid),
                              tau=m["tau"], gamma=m["gamma"], lambdaD=m["lambdaD"])

    def mobility(self) -> MobilityModel:
        m = self.values["mobility"]
        factory = {"caughey_thomas": caughey_thomas, "constant_saturated": constant_saturated}[m["kind"]]
        return factory(m["mu0"], m["vsat"])

    def field4(self, section: str, grid: Grid2D | None = None) -> np.ndarray:
        grid = grid or self.grid
        s = self.values[section]
        return np.stack([s[f"n{i}"].evaluate(grid) for i in range(4)])

    def with_overrides(self, overrides: dict[str, str]) -> "ScenarioConfig":
        return parse_config(dump_config(self), overrides)


def _validate(cfg: ScenarioConfig) -> list[str]:
    errors = []
    v = cfg.values
    g = v["grid"]
    for k in ("nx", "ny"):
        if g[k] < 3:
            errors.append(f"grid.{k} >= 3 required")
    for k in ("lx", "ly"):
        if not g[k] > 0:
            errors.append(f"grid.{k} > 0 required")
    t = v["time"]
    if not t["h"] > 0:
        errors.append("time.h > 0 required")
    if not t["T"] > 0:
        errors.append("time.T > 0 required")
    if t["h"] > 0 and t["T"] > 0:
        if t["h"] > t["T"]:
            errors.append("time.h <= time.T required")
        elif abs(t["T"] / t["h"] - round(t["T"] / t["h"])) > 1e-9 * t["T"] / t["h"]:
            errors.append("time.T must be a whole number of steps time.h")
    if t["snapshot_every"] < 0:
        errors.append("time.snapshot_every >= 0 required")
    if t["record_every"] < 1:
        errors.append("time.record_every >= 1 required")
    mob = v["mobility"]
    if mob["kind"] not in ("caughey_thomas", "constant_saturated"):
        errors.append(f"mobility.kind must be caughey_thomas or constant_saturated, got {mob['kind']!r}")
    if not mob["mu0"] > 0:
        errors.append("mobility.mu0 > 0 required")
    if not mob["vsat"] > 0:
        errors.append("mobility.vsat > 0 required")
    llg = v["llg"]
    if llg["profile"] not in ("constant", "tilt"):
        errors.append(f"llg.profile must be constant or tilt, got {llg['profile']!r}")
    if not 0 < llg["cap_factor"] <= 0.2:
        errors.append("0 < llg.cap_factor <= 0.2 required")
    s = v["solver"]
    if not s["fp_tol"] > 0:
        errors.append("solver.fp_tol > 0 required")
    if s["fp_max"] < 1:
        errors.append("solver.fp_max >= 1 required")
    if not 0 < s["damping"] <= 1:
        errors.append("0 < solver.damping <= 1 required")
    if s["averaging"] not in ("arithmetic", "harmonic"):
        errors.append("solver.averaging must be arithmetic or harmonic")
    if s["linear_solver"] not in ("auto", "direct", "cg"):
        errors.append("solver.linear_solver must be auto, direct or cg")
    if s["max_halvings"] < 0:
        errors.append("solver.max_halvings >= 0 required")
    if v["run"]["mode"] not in MODES:
        errors.append(f"run.mode must be one of {', '.join(MODES)}, got {v['run']['mode']!r}")
    if v["run"]["equilibrium_form"] not in ("flux", "log"):
        errors.append("run.equilibrium_form must be flux or log")
    if v["run"]["mode"] == "oracle_compare" and llg["profile"] != "constant":
        errors.append("run.mode = oracle_compare requires llg.profile = constant")
    if v["run"]["mode"] == "residual_audit":
        grids = v["residual"]["grids"]
        if len(grids) < 2 or any(n < 5 for n in grids):
            errors.append("residual.grids needs at least two grids with >= 5 nodes")
    for key in ("c0", "c"):
        val = v["audit"][key]
        if val is not None and not val >= 0:
            errors.append(f"audit.{key} >= 0 required")
    m = v["material"]
    if not errors or all(not e.startswith("grid.") for e in errors):
        try:
            grid = cfg.grid
            D, p = m["D"].evaluate(grid), m["p"].evaluate(grid)
        except Exception as exc:  # grid itself invalid
            errors.append(f"cannot evaluate material profiles: {exc}")
        else:
            errors.extend(material_violations(D, p, m["tau"], m["gamma"], m["lambdaD"]))
            if not np.all(np.isfinite(m["C"].evaluate(grid))):
                errors.append("doping profile C must be finite")
            if v["run"]["mode"] in ("equilibrium", "decay_study"):
                n0b = v["boundary"]["n0"].evaluate(grid)[grid.boundary_mask]
                if not np.all(n0b > 0):
                    errors.append("boundary.n0 > 0 required on the boundary for equilibrium modes")
    return errors


def parse_config(text: str, overrides: dict[str, str] | None = None) -> ScenarioConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem found."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    errors: list[str] = []
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"malformed config: {exc}"]) from None
    raw: dict[str, dict[str, str]] = {s: dict(cp.items(s)) for s in cp.sections()}
    for dotted, value in (overrides or {}).items():
        if "." not in dotted:
            errors.append(f"override {dotted!r} must be section.key")
            continue
        sec, key = dotted.split(".", 1)
        raw.setdefault(sec, {})[key] = value
    values: dict[str, dict[str, Any]] = {}
    for sec, keys in raw.items():
        if sec not in SCHEMA:
            errors.append(f"unknown section [{sec}]")
            continue
        for key in keys:
            if key not in SCHEMA[sec]:
                errors.append(f"unknown key {sec}.{key}")
    for sec, spec in SCHEMA.items():
        values[sec] = {}
        for key, (conv, default) in spec.items():
            if key in raw.get(sec, {}):
                try:
                    values[sec][key] = conv(raw[sec][key])
                except (ValueError, TypeError) as exc:
                    errors.append(f"{sec}.{key}: {exc}")
                    values[sec][key] = default
            else:
                values[sec][key] = default
    cfg = ScenarioConfig(values)
    if not errors:
        errors.extend(_validate(cfg))
    else:
        # still report constraint violations alongside parse errors
        errors.extend(e for e in _validate(cfg) if e not in errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def dump_config(cfg: ScenarioConfig) -> str:
    """Every key, defaults included; ``parse_config(dump_config(c))`` equals ``c``."""
    lines = []
    for sec, spec in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key in spec:
            lines.append(f"{key} = {_format(cfg.values[sec][key])}")
        lines.append("")
    return "\n".join(lines)


def load_config(path, overrides: dict[str, str] | None = None) -> ScenarioConfig:
    with open(path) as fh:
        return parse_config(fh.read(), overrides)


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError([f"override {item!r} must look like section.key=value"])
        k, val = item.split("=", 1)
        out[k.strip()] = val.strip()
    return out
