"""Run configuration: one flat record, strict INI round-trip, presets.

Every tunable of the laboratory lives in :class:`RunConfig` with the
default experiment values baked in.  Files use ``key = value`` sections;
unknown sections or keys are rejected so that typos cannot silently run
a different experiment.  Reloading a saved snapshot reproduces the run
bit for bit.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass
from pathlib import Path

__all__ = [
    "ConfigError",
    "RunConfig",
    "PRESETS",
    "SECTIONS",
    "load_config",
    "save_config",
    "config_to_string",
    "apply_overrides",
]


class ConfigError(ValueError):
    """Bad configuration input (maps to exit code 2 in the CLI)."""


@dataclass
class RunConfig:
    """All knobs of a run; defaults reproduce the reference experiment."""

    # run
    seed: int = 0
    track: str = "simulation"  # simulation | simplified
    episodes: int = 200
    checkpoint_every: int = 50
    jobs: int = 1
    # population
    n1: int = 90
    n2: int = 10
    rho_s: float = 8.0
    d_max: int = 10
    d_min: int = 1
    graph_refresh: str = "period"  # period | episode
    # learning
    actor_lr: float = 1e-4
    actor_warmup_episodes: int = 0
    critic_lr: float = 1e-2
    gamma: float = 0.9
    td_use_gamma: bool = False
    role_period: int = 80
    ci_epsilon_frac: float = 0.05
    smooth_window: int = 20
    # plant
    length: float = 5.0
    width: float = 2.0
    lf: float = 2.5
    lr: float = 2.5
    throttle_gain: float = 0.5
    drag: float = 0.0
    ts: float = 0.02
    lam: float = 0.084
    v0: float = 15.0
    tau_steps: int = 100
    # mpc
    np_steps: int = 100
    nc_steps: int = 60
    q_diag: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    r_diag: tuple[float, float] = (0.1, 0.1)
    u_max: tuple[float, float] = (math.inf, math.inf)
    du_max: tuple[float, float] = (30.0, math.pi / 30.0 * 0.02)
    lat_margin: float = 0.5
    lon_margin: float = 2.5
    solver_max_iter: int = 200
    solver_eps: float = 1e-8
    # scenario
    road_half_width: float = 9.0
    obstacle_x: float = 100.0
    obstacle_y: float = 0.0
    obstacle_length: float = 5.0
    obstacle_width: float = 2.0
    visibility: float = 30.0
    warmup_steps: int = 100
    max_steps: int = 400
    v_target: float = 15.0
    # simplified
    mode_set: str = "canonical"  # canonical | derived
    sim_x0: tuple[float, float] = (1.0, 1.0)
    reward_cap: float = 50.0
    obs_scale: float = 10.0
    periods_per_episode: int = 5


#: INI layout: section -> ordered field names.
SECTIONS: dict[str, tuple[str, ...]] = {
    "run": ("seed", "track", "episodes", "checkpoint_every", "jobs"),
    "population": ("n1", "n2", "rho_s", "d_max", "d_min", "graph_refresh"),
    "learning": ("actor_lr", "actor_warmup_episodes", "critic_lr", "gamma",
                 "td_use_gamma", "role_period", "ci_epsilon_frac",
                 "smooth_window"),
    "plant": ("length", "width", "lf", "lr", "throttle_gain", "drag", "ts",
              "lam", "v0", "tau_steps"),
    "mpc": ("np_steps", "nc_steps", "q_diag", "r_diag", "u_max", "du_max",
            "lat_margin", "lon_margin", "solver_max_iter", "solver_eps"),
    "scenario": ("road_half_width", "obstacle_x", "obstacle_y", "obstacle_length",
                 "obstacle_width", "visibility", "warmup_steps", "max_steps",
                 "v_target"),
    "simplified": ("mode_set", "sim_x0", "reward_cap", "obs_scale",
                   "periods_per_episode"),
}

_FIELD_SECTION = {name: sec for sec, names in SECTIONS.items() for name in names}

#: Named experiment presets (population/case setups; desk_smoke is the
#: fast simplified-track configuration used by the role-division smoke
#: test: population fixed, remaining knobs tuned for desk-scale budgets).
PRESETS: dict[str, dict] = {
    "case1": {"n1": 90, "n2": 10, "rho_s": 8.0},
    "case2": {"n1": 90, "n2": 10, "rho_s": 4.0},
    "case3": {"n1": 10, "n2": 10, "rho_s": 8.0},
    "desk_smoke": {
        "n1": 30, "n2": 5, "rho_s": 8.0, "role_period": 30,
        "track": "simplified", "episodes": 1200, "periods_per_episode": 8,
        "actor_lr": 2e-3, "critic_lr": 0.1, "td_use_gamma": True,
        "d_min": 34, "d_max": 34, "graph_refresh": "episode",
        "sim_x0": (5.0, 15.0), "reward_cap": 150.0, "obs_scale": 20.0,
        "actor_warmup_episodes": 200, "smooth_window": 20,
        "checkpoint_every": 300,
    },
}

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    """Parse one raw string per the field's declared type."""
    f = _FIELDS[name]
    raw = raw.strip()
    base = f.type if isinstance(f.type, str) else str(f.type)
    try:
        if base.startswith("tuple"):
            parts = [p for p in raw.replace(",", " ").split() if p]
            want = base.count("float")
            if len(parts) != want:
                raise ValueError(f"expected {want} numbers")
            return tuple(float(p) for p in parts)
        if base == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {raw!r} ({exc})") from None


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.track not in ("simulation", "simplified"):
        raise ConfigError(f"unknown track {cfg.track!r}")
    if cfg.mode_set not in ("canonical", "derived"):
        raise ConfigError(f"unknown mode_set {cfg.mode_set!r}")
    if cfg.graph_refresh not in ("period", "episode"):
        raise ConfigError(f"unknown graph_refresh {cfg.graph_refresh!r}")
    if cfg.n1 < 0 or cfg.n2 < 0 or cfg.n1 + cfg.n2 < 1:
        raise ConfigError("population sizes must be non-negative and total >= 1")
    if cfg.rho_s <= 0:
        raise ConfigError("rho_s must be positive")
    if cfg.role_period < 1:
        raise ConfigError("role_period must be >= 1")
    if cfg.episodes < 0:
        raise ConfigError("episodes must be >= 0")
    if cfg.actor_warmup_episodes < 0:
        raise ConfigError("actor_warmup_episodes must be >= 0")
    if not 1 <= cfg.nc_steps <= cfg.np_steps:
        raise ConfigError("need 1 <= nc_steps <= np_steps")
    if cfg.ts <= 0 or cfg.tau_steps < 0:
        raise ConfigError("ts must be positive and tau_steps non-negative")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if not 0 <= cfg.ci_epsilon_frac < 1:
        raise ConfigError("ci_epsilon_frac must be in [0, 1)")
    return cfg


def apply_overrides(cfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """New config with string overrides coerced onto ``cfg``."""
    values = {}
    for name, raw in overrides.items():
        if name not in _FIELDS:
            raise ConfigError(f"unknown config field {name!r}")
        values[name] = raw if not isinstance(raw, str) else _coerce(name, raw)
    return validate(dataclasses.replace(cfg, **values))


def apply_preset(cfg: RunConfig, preset: str) -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(
            f"unknown preset {preset!r} (have: {', '.join(sorted(PRESETS))})")
    return dataclasses.replace(cfg, **PRESETS[preset])


def load_config(path=None, preset: str | None = None,
                overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults -> preset -> file -> overrides, validated."""
    cfg = RunConfig()
    if preset:
        cfg = apply_preset(cfg, preset)
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        values = {}
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                values[key] = _coerce(key, raw)
        cfg = dataclasses.replace(cfg, **values)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return validate(cfg)


def config_to_string(cfg: RunConfig) -> str:
    """Deterministic INI snapshot (fixed section and key order)."""
    out = io.StringIO()
    for section, names in SECTIONS.items():
        out.write(f"[{section}]\n")
        for name in names:
            out.write(f"{name} = {_fmt(getattr(cfg, name))}\n")
        out.write("\n")
    return out.getvalue()


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(config_to_string(cfg))
