"""Flat ``key = value`` configuration with dotted keys.

Blank lines and ``#`` comments are ignored; unknown keys and out-of-range
values raise ``ConfigError`` naming the key.  Every key has a default, so an
empty file is a valid configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .sde_integrator import RNG_ALGORITHM, SimConfig
from .invariant_measure import DampedConfig
from .operators import DriftParams, NoiseModel, make_forcing
from .spectral_core import Grid, SpectralField, leray_project, mode_field, random_field, rescale
from .taming import TamingFunction


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str):
    return None if s.strip().lower() in ("none", "") else float(s)


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(",", " ").split())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _words(s: str) -> tuple[str, ...]:
    return tuple(x for x in s.replace(",", " ").split())


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class Key:
    default: Any
    parse: Callable[[str], Any]
    check: Callable[[Any], bool] = lambda v: True
    doc: str = ""


def _choice(*opts):
    return Key(opts[0], str, lambda v: v in opts, "one of " + "|".join(opts))


SCHEMA: dict[str, Key] = {
    "grid.M": Key(16, int, lambda v: v >= 8 and v % 2 == 0, "collocation points per axis (even, >= 8)"),
    "grid.L": Key(2 * math.pi, float, lambda v: v > 0, "box side length, > 0"),
    "model.n": Key(4.0, float, lambda v: v >= 0, "Fourier-ball cutoff in wavenumber units, >= 0"),
    "model.nu": Key(1.0, float, lambda v: v > 0, "viscosity, > 0"),
    "model.alpha": Key(0.0, float, lambda v: v >= 0, "damping, >= 0 (0 is the undamped system)"),
    "model.nonlinear": Key(True, _bool, doc="include the advection term"),
    "taming.N": Key(10.0, float, lambda v: v > 0, "taming threshold, > 0"),
    "taming.enabled": Key(True, _bool, doc="include the tamed term"),
    "noise.J": Key(4, int, lambda v: v >= 0, "number of Wiener directions, >= 0"),
    "noise.kind": _choice("constant", "banded"),
    "noise.sigma2": Key(0.25, float, lambda v: 0 <= v <= 0.25, "sup_x sum_j |sigma_j|^2, at most 1/4"),
    "noise.modulation": Key(0.25, float, lambda v: 0 <= v <= 1, "banded-noise modulation depth, in [0, 1]"),
    "forcing.kind": _choice("state", "fixed", "none"),
    "forcing.kappa": Key(0.1, float, lambda v: v >= 0, "Lipschitz gain of the state forcing, >= 0"),
    "forcing.f0_norm2": Key(0.01, float, lambda v: v >= 0, "|f0|_H^2, >= 0"),
    "forcing.f0_radius": Key(1.5, float, lambda v: v > 0, "cutoff of the random f0, > 0"),
    "forcing.f0_seed": Key(7, int, lambda v: v >= 0, "seed of the random f0, >= 0"),
    "init.kind": _choice("random", "mode", "zero"),
    "init.scale_by": _choice("V", "H", "sup"),
    "init.scale": Key(2.0, float, lambda v: v >= 0, "norm of u0 in init.scale_by, >= 0"),
    "init.radius": Key(1.5, float, lambda v: v > 0, "cutoff of the random u0, > 0"),
    "init.seed": Key(1, int, lambda v: v >= 0, "seed of the random u0, >= 0"),
    "init.wavevector": Key((1, 0, 0), _ints, lambda v: len(v) == 3, "integer wavevector of a mode u0, three entries"),
    "init.direction": Key((0.0, 1.0, 0.0), _floats, lambda v: len(v) == 3, "direction of a mode u0, three entries"),
    "time.dt": Key(1e-3, float, lambda v: v > 0, "time step, > 0"),
    "time.T": Key(1.0, float, lambda v: v >= 0, "horizon, >= 0"),
    "run.seed": Key(12345, int, lambda v: 0 <= v < 2**64, "base seed, in [0, 2^64)"),
    "run.paths": Key(1, int, lambda v: v >= 1, "ensemble size, >= 1"),
    "run.scheme": _choice("semi-implicit", "explicit"),
    "run.R_stop": Key(None, _opt_float, lambda v: v is None or v > 0, "V-norm stopping radius, > 0 or none"),
    "run.batch": Key(64, int, lambda v: v >= 1, "paths integrated together, >= 1"),
    "run.full_diagnostics": Key(True, _bool, doc="record || |u||grad u| ||^2 (costs extra transforms)"),
    "run.debug": Key(False, _bool, doc="check state invariants every step"),
    "output.snapshot_every": Key(0, int, lambda v: v >= 0, "steps between snapshots, >= 0 (0 keeps first and last)"),
    "invariant.burn_in": Key(0.0, float, lambda v: v >= 0, "burn-in time, >= 0"),
    "invariant.observables": Key(("V2", "H2", "L4_4"), _words, lambda v: len(v) > 0, "observables, non-empty list"),
    "invariant.tail_level": Key(0.1, float, lambda v: 0 < v < 1, "Chebyshev level used to pick R, in (0, 1)"),
}
ALIASES = {"model.N": "taming.N"}


@dataclass(frozen=True)
class Config:
    values: dict = field(default_factory=lambda: {k: v.default for k, v in SCHEMA.items()})

    def __getitem__(self, key):
        return self.values[ALIASES.get(key, key)]

    def with_(self, **updates) -> "Config":
        """Override values; keyword names use '__' for '.' (run__paths=8)."""
        vals = dict(self.values)
        for k, v in updates.items():
            key = ALIASES.get(k.replace("__", "."), k.replace("__", "."))
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            vals[key] = v
        cfg = Config(vals)
        validate(cfg)
        return cfg


def validate(cfg: Config) -> None:
    for k, spec in SCHEMA.items():
        if not spec.check(cfg.values[k]):
            raise ConfigError(f"{k} = {_fmt(cfg.values[k])} is out of range: {spec.doc}")


def parse_text(text: str, source: str = "<string>") -> Config:
    vals = {k: v.default for k, v in SCHEMA.items()}
    seen: dict[str, tuple[str, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        canon = ALIASES.get(key, key)
        if canon not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            parsed = SCHEMA[canon].parse(value)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {e}") from None
        if canon in seen and seen[canon][1] != _fmt(parsed):
            raise ConfigError(f"{source}:{lineno}: {key} conflicts with {seen[canon][0]}")
        seen[canon] = (key, _fmt(parsed))
        vals[canon] = parsed
    cfg = Config(vals)
    validate(cfg)
    return cfg


def load_config(path) -> Config:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_text(p.read_text(), str(p))


def format_config(cfg: Config) -> str:
    lines = [f"# rng: {RNG_ALGORITHM}"]
    section = None
    for k in SCHEMA:
        sec = k.split(".")[0]
        if sec != section:
            lines.append("")
            lines.append(f"# {sec}")
            section = sec
        lines.append(f"{k} = {_fmt(cfg.values[k])}")
    return "\n".join(lines) + "\n"


def initial_field(cfg: Config, grid: Grid, n: float) -> SpectralField:
    kind = cfg["init.kind"]
    if kind == "zero":
        return SpectralField.zeros(grid, n=grid.effective_cutoff(n))
    if kind == "mode":
        u = leray_project(mode_field(grid, cfg["init.wavevector"], cfg["init.direction"], n=grid.effective_cutoff(n)))
        if not np.abs(u.coeffs).any():
            raise ConfigError("init.wavevector/init.direction give a zero field inside the cutoff ball")
        return rescale(u, cfg["init.scale"], cfg["init.scale_by"])
    rng = np.random.default_rng(cfg["init.seed"])
    return random_field(grid, min(cfg["init.radius"], n), rng, cfg["init.scale"], scale_by=cfg["init.scale_by"])


def build(cfg: Config) -> SimConfig | DampedConfig:
    """SimConfig, or DampedConfig when alpha > 0 with fixed (or no) forcing."""
    try:
        grid = Grid(cfg["grid.M"], cfg["grid.L"])
        n = cfg["model.n"]
        forcing = None
        if cfg["forcing.kind"] != "none":
            forcing = make_forcing(grid, n, cfg["forcing.kind"], cfg["forcing.kappa"], cfg["forcing.f0_norm2"],
                                   cfg["forcing.f0_radius"], cfg["forcing.f0_seed"])
        params = DriftParams(
            nu=cfg["model.nu"],
            alpha=cfg["model.alpha"],
            tf=TamingFunction(cfg["taming.N"]) if cfg["taming.enabled"] else None,
            forcing=forcing,
            nonlinear=cfg["model.nonlinear"],
        )
        noise = NoiseModel(grid, cfg["noise.J"], cfg["noise.kind"], cfg["noise.sigma2"], cfg["noise.modulation"])
        sim = SimConfig(
            grid, n, cfg["time.dt"], cfg["time.T"], params, noise, initial_field(cfg, grid, n),
            seed=cfg["run.seed"], n_paths=cfg["run.paths"], scheme=cfg["run.scheme"], R_stop=cfg["run.R_stop"],
            snapshot_every=cfg["output.snapshot_every"], batch_size=cfg["run.batch"], debug=cfg["run.debug"],
            full_diagnostics=cfg["run.full_diagnostics"],
        )
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if params.alpha > 0 and (forcing is None or forcing.kind == "fixed"):
        return DampedConfig(sim)
    return sim


def parse_config(path) -> SimConfig | DampedConfig:
    return build(load_config(path))


def packaged_config(name: str) -> Path:
    """Path of a config file shipped with the package (e.g. 'acceptance')."""
    p = Path(__file__).with_name("configs") / f"{name}.cfg"
    if not p.is_file():
        raise ConfigError(f"no packaged config named {name!r}")
    return p
