"""Scenario configuration: TOML schema, validation, and object construction.

Configs are strict: unknown sections or keys are rejected with the exact key
path, so a typo cannot silently fall back to a default.  The resolved config
(defaults filled in) is embedded into every run manifest.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .discounting import (DiscountCurve, ExponentialDiscount, HyperbolicDiscount,
                          TabulatedDiscount)
from .dynamics import BrownianMotion, ito_preset
from .equilibrium import ValuationBudget
from .regions import Grid, PolicyRegion, parse_region
from .valuation import PayoffField, named_payoff


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


_SCHEMA = {
    "process": {"kind": str, "dim": int, "dt": float, "horizon": float, "preset": str},
    "discount": {"kind": str, "beta": float, "alpha": float, "table_path": str},
    "payoff": {"kind": str, "a": float, "strike": float, "level": float},
    "grid": {"lower": list, "upper": list, "counts": list},
    "regions": {"target": str, "candidates": list, "family": str, "b_values": list},
    "budget": {"n_paths": int, "seed": int, "t_tail": float, "threads": int,
               "eps": float, "max_iters": int},
}

_REQUIRED = {
    "process": ("kind", "dim", "dt"),
    "discount": ("kind",),
    "payoff": ("kind",),
    "grid": ("lower", "upper", "counts"),
}

_DEFAULTS = {
    "process": {"horizon": 25.0, "preset": ""},
    "regions": {"target": "", "candidates": [], "family": "", "b_values": []},
    "budget": {"n_paths": 1000, "seed": 0, "t_tail": 0.0, "threads": 1,
               "eps": 0.0, "max_iters": 8},
}


def _check_section(name: str, found: dict) -> dict:
    schema = _SCHEMA[name]
    out = dict(_DEFAULTS.get(name, {}))
    for key, value in found.items():
        if key not in schema:
            raise ConfigError(f"[{name}].{key}", "unknown key")
        want = schema[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, want) or isinstance(value, bool):
            raise ConfigError(f"[{name}].{key}", f"expected {want.__name__}")
        out[key] = value
    for key in _REQUIRED.get(name, ()):
        if key not in out:
            raise ConfigError(f"[{name}].{key}", "required key missing")
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    base_dir: Path
    resolved: dict

    # -- constructors for the bound objects ---------------------------------
    def grid(self) -> Grid:
        g = self.resolved["grid"]
        return Grid(lower=tuple(g["lower"]), upper=tuple(g["upper"]),
                    counts=tuple(g["counts"]))

    def model(self):
        p = self.resolved["process"]
        if p["kind"] == "bm":
            return BrownianMotion(p["dim"])
        if p["kind"] == "ito":
            return ito_preset(p["preset"], p["dim"])
        raise ConfigError("[process].kind", f"unknown kind {p['kind']!r}")

    def discount(self) -> DiscountCurve:
        d = self.resolved["discount"]
        if d["kind"] == "hyperbolic":
            return HyperbolicDiscount(d["beta"])
        if d["kind"] == "exponential":
            return ExponentialDiscount(d["alpha"])
        if d["kind"] == "tabulated":
            table = np.loadtxt(self.base_dir / d["table_path"], delimiter=",")
            return TabulatedDiscount(table[:, 0], table[:, 1])
        raise ConfigError("[discount].kind", f"unknown kind {d['kind']!r}")

    def payoff(self) -> PayoffField:
        p = dict(self.resolved["payoff"])
        kind = p.pop("kind")
        try:
            return named_payoff(kind, **p)
        except (KeyError, ValueError) as exc:
            raise ConfigError("[payoff]", str(exc)) from exc

    def region(self, text: str) -> PolicyRegion:
        return parse_region(text, grid=self.grid(), base_dir=str(self.base_dir))

    def target_region(self) -> PolicyRegion:
        text = self.resolved["regions"]["target"]
        if not text:
            raise ConfigError("[regions].target", "required for this subcommand")
        return self.region(text)

    def candidate_regions(self) -> list[PolicyRegion]:
        c = self.resolved["regions"]["candidates"]
        if not c:
            raise ConfigError("[regions].candidates", "required for this subcommand")
        return [self.region(text) for text in c]

    def budget(self, threads: int | None = None, seed: int | None = None) -> ValuationBudget:
        b = self.resolved["budget"]
        p = self.resolved["process"]
        t_tail = b["t_tail"] if b["t_tail"] > 0 else p["horizon"]
        return ValuationBudget(
            model=self.model(), payoff=self.payoff(), discount=self.discount(),
            grid=self.grid(), n_paths=b["n_paths"],
            seed=b["seed"] if seed is None else seed,
            dt=p["dt"], t_tail=t_tail,
            eps=b["eps"] if b["eps"] > 0 else None,
            threads=b["threads"] if threads is None else threads,
            max_iters=b["max_iters"])


def _validate_semantics(resolved: dict) -> None:
    d = resolved["discount"]
    if d["kind"] == "hyperbolic":
        if "beta" not in d:
            raise ConfigError("[discount].beta", "required for hyperbolic discounting")
        if d["beta"] <= 0:
            raise ConfigError("[discount].beta", "must be positive")
    if d["kind"] == "exponential":
        if "alpha" not in d:
            raise ConfigError("[discount].alpha", "required for exponential discounting")
        if d["alpha"] <= 0:
            raise ConfigError("[discount].alpha", "must be positive")
    if d["kind"] == "tabulated" and "table_path" not in d:
        raise ConfigError("[discount].table_path", "required for tabulated discounting")

    p = resolved["process"]
    if p["dim"] < 1:
        raise ConfigError("[process].dim", "must be >= 1")
    if p["dt"] <= 0:
        raise ConfigError("[process].dt", "must be positive")
    if p["kind"] == "ito" and not p["preset"]:
        raise ConfigError("[process].preset", "required for ito processes")

    g = resolved["grid"]
    if not (len(g["lower"]) == len(g["upper"]) == len(g["counts"]) == p["dim"]):
        raise ConfigError("[grid]", "lower/upper/counts must match [process].dim")

    b = resolved["budget"]
    if b["n_paths"] < 2:
        raise ConfigError("[budget].n_paths", "must be at least 2")
    if b["threads"] < 0:
        raise ConfigError("[budget].threads", "must be >= 0 (0 means auto)")

    bv = resolved["regions"]["b_values"]
    if bv and sorted(bv) != list(bv):
        raise ConfigError("[regions].b_values", "must be ascending")


def load_config(path) -> ScenarioConfig:
    """Parse and validate a scenario TOML file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(str(path), "file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"parse error: {exc}") from None

    resolved = {}
    for section, found in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"[{section}]", "unknown section")
        if not isinstance(found, dict):
            raise ConfigError(f"[{section}]", "expected a table")
        resolved[section] = _check_section(section, found)
    for section in _REQUIRED:
        if section not in resolved:
            raise ConfigError(f"[{section}]", "required section missing")
    for section in ("regions", "budget"):
        resolved.setdefault(section, dict(_DEFAULTS[section]))
    _validate_semantics(resolved)
    return ScenarioConfig(name=path.stem, base_dir=path.parent, resolved=resolved)
