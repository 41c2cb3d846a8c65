"""Scenario files: parsing, canonical serialization and initial-state presets.

A scenario is an INI-style text file read with ``configparser``. Every key has
a default (some of them taken from ``config/config.json``), so a scenario only
lists what it changes. ``dump_scenario`` writes every key in a fixed order,
which makes the dump canonical and parse → dump → parse the identity.
"""
from __future__ import annotations

import configparser
import copy
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from flowlab.errors import ConfigError
from flowlab.flows import (
    GAUGES,
    CouplingSchedule,
    ConnectionState,
    FlowParams,
    FlowState,
    HRFState,
    InvariantState,
    StepperConfig,
    WarpedState,
    max_diffusivity,
)
from flowlab.geometry import SyntheticCurvature, build_metric_state
from flowlab.grid_core import (
    FiberMetricField,
    Grid,
    ScalarField,
    SymTensor2Field,
    ThreeFormField,
    VecOneFormField,
    integrate,
    load_field,
)
from flowlab.stability import BLOCKS
from flowlab.targets import MapField, TargetSpace

logger = logging.getLogger(__name__)

SETTINGS_PATH = Path(__file__).resolve().parent.parent / "config" / "config.json"

DEFAULT_SETTINGS: dict[str, Any] = {
    "grid_dim": 2,
    "grid_points": 32,
    "grid_period": 2.0 * math.pi,
    "coupling_c0": 1.0,
    "coupling_rho": 0.0,
    "fiber_dim": 1,
    "warped_mu": -0.5,
    "cfl": 0.25,
    "record_every": 10,
    "monitor_margin": 1e-3,
    "margin_c1": 1.0,
    "spectrum_k": 6,
    "dense_limit": 20_000,
    "verify_seed": 1234,
    "identity_tol": 1e-10,
    "fixed_point_tol": 1e-13,
    "linearization_tol": 1e-6,
    "output_dir": "outputs",
}

SYSTEMS = ("hrf", "warped", "invariant", "connection")
PRESETS = ("flat", "fixed-point", "sin-bump", "random", "space-form", "file")
MONITOR_NAMES = ("sandwich", "gradient_decay")
TARGETS = ("euclidean", "spd")

# fraction of the CFL limit used when dt = auto
AUTO_DT_SAFETY = 0.9


def load_settings(path: str | Path | None = None) -> dict[str, Any]:
    """Lab-wide defaults from config.json, falling back to the built-in values."""
    path = Path(path) if path is not None else SETTINGS_PATH
    settings = dict(DEFAULT_SETTINGS)
    if path.exists():
        with open(path, "r") as f:
            settings.update(json.load(f))
    else:
        logger.debug("no settings file at %s; using built-in defaults", path)
    return settings


# --------------------------------------------------------------------------- schema

@dataclass(frozen=True)
class Option:
    kind: str
    default: Any
    choices: tuple[str, ...] = ()
    word: str = ""

    def parse(self, key: str, raw: str) -> Any:
        raw = raw.strip()
        try:
            if self.kind == "int":
                value = int(raw)
            elif self.kind == "float":
                value = float(raw)
            elif self.kind == "bool":
                value = _parse_bool(raw)
            elif self.kind == "float_or":
                value = self.word if raw.lower() == self.word else float(raw)
            elif self.kind == "list":
                value = tuple(item.strip() for item in raw.split(",") if item.strip())
            else:
                value = raw
        except ValueError:
            raise ConfigError(key, f"cannot read {raw!r} as {self.kind}") from None
        self.check(key, value)
        return value

    def check(self, key: str, value: Any) -> None:
        if not self.choices:
            return
        items = value if self.kind == "list" else (value,)
        for item in items:
            if item not in self.choices:
                raise ConfigError(key, f"{item!r} is not one of {self.choices}")

    def format(self, value: Any) -> str:
        if self.kind == "bool":
            return "true" if value else "false"
        if self.kind == "float" or (self.kind == "float_or" and value != self.word):
            return repr(float(value))
        if self.kind == "list":
            return ", ".join(value)
        return str(value)


def _parse_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(raw)


def scenario_schema(settings: dict[str, Any] | None = None) -> dict[str, dict[str, Option]]:
    s = {**DEFAULT_SETTINGS, **(settings or {})}
    return {
        "scenario": {
            "name": Option("str", "untitled"),
            "system": Option("str", "warped", SYSTEMS),
            "seed": Option("int", 0),
            "output": Option("str", f"{s['output_dir']}/run"),
        },
        "grid": {
            "dim": Option("int", int(s["grid_dim"])),
            "points": Option("int", int(s["grid_points"])),
            "period": Option("float", float(s["grid_period"])),
        },
        "initial": {
            "preset": Option("str", "sin-bump", PRESETS),
            "amplitude": Option("float", 0.1),
            "mode": Option("int", 1),
            "metric_amplitude": Option("float", 0.0),
            "phi0": Option("float", 0.0),
            "target": Option("str", "euclidean", TARGETS),
            "target_rank": Option("int", 1),
            "fiber_rank": Option("int", 1),
            "g_file": Option("str", ""),
            "phi_file": Option("str", ""),
        },
        "flow": {
            "c0": Option("float", float(s["coupling_c0"])),
            "rho": Option("float", float(s["coupling_rho"])),
            "s": Option("float_or", "auto", word="auto"),
            "lam": Option("float", 0.0),
            "synth_K": Option("float_or", "none", word="none"),
            "m": Option("int", int(s["fiber_dim"])),
            "mu": Option("float", float(s["warped_mu"])),
            "gauge": Option("str", "none", GAUGES),
            "normalized": Option("bool", True),
            "pre_gauge": Option("bool", False),
        },
        "stepper": {
            "dt": Option("float_or", "auto", word="auto"),
            "t_end": Option("float", 1.0),
            "cfl": Option("float", float(s["cfl"])),
            "record_every": Option("int", int(s["record_every"])),
        },
        "monitors": {
            "names": Option("list", MONITOR_NAMES, MONITOR_NAMES),
            "margin": Option("float_or", float(s["monitor_margin"]), word="auto"),
            "c1": Option("float", float(s["margin_c1"])),
        },
        "spectrum": {
            "block": Option("str", "L0_metric", BLOCKS),
            "k": Option("int", int(s["spectrum_k"])),
            "trace_free": Option("bool", False),
            "dense_limit": Option("int", int(s["dense_limit"])),
        },
    }


# --------------------------------------------------------------------------- config object

@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    values: dict[str, dict[str, Any]]
    settings: dict[str, Any]

    def __eq__(self, other):
        if not isinstance(other, ScenarioConfig):
            return NotImplemented
        return self.values == other.values

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def get(self, section: str, key: str) -> Any:
        return self.values[section][key]

    @property
    def name(self) -> str:
        return self.values["scenario"]["name"]

    @property
    def system(self) -> str:
        return self.values["scenario"]["system"]

    @property
    def seed(self) -> int:
        return self.values["scenario"]["seed"]

    @property
    def output(self) -> str:
        return self.values["scenario"]["output"]

    def with_values(self, section: str, **changes) -> "ScenarioConfig":
        schema = scenario_schema(self.settings)
        if section not in schema:
            raise ConfigError(section, "unknown section")
        values = copy.deepcopy(self.values)
        for key, value in changes.items():
            if key not in schema[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
            schema[section][key].check(f"{section}.{key}", value)
            values[section][key] = value
        return ScenarioConfig(values, self.settings)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return self.with_values("scenario", seed=int(seed))

    def dump(self) -> str:
        return dump_scenario(self)

    def config_hash(self) -> str:
        return hashlib.sha256(self.dump().encode("utf-8")).hexdigest()


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    return parser


def parse_scenario(text: str, settings: dict[str, Any] | None = None) -> ScenarioConfig:
    settings = load_settings() if settings is None else settings
    schema = scenario_schema(settings)
    parser = _parser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError("scenario", f"unreadable scenario text: {e}") from None

    for section in parser.sections():
        if section not in schema:
            raise ConfigError(section, "unknown section")
        for key in parser[section]:
            if key not in schema[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")

    values: dict[str, dict[str, Any]] = {}
    for section, options in schema.items():
        values[section] = {}
        for key, option in options.items():
            if parser.has_option(section, key):
                values[section][key] = option.parse(f"{section}.{key}", parser.get(section, key))
            else:
                values[section][key] = option.default
    cfg = ScenarioConfig(values, settings)
    _validate(cfg)
    return cfg


def _validate(cfg: ScenarioConfig) -> None:
    g, ini, flow = cfg["grid"], cfg["initial"], cfg["flow"]
    if g["dim"] not in (1, 2, 3):
        raise ConfigError("grid.dim", f"dimension must be 1, 2 or 3, got {g['dim']}")
    if g["points"] < 8:
        raise ConfigError("grid.points", f"need at least 8 points per axis, got {g['points']}")
    if g["period"] <= 0:
        raise ConfigError("grid.period", f"period must be positive, got {g['period']}")
    if cfg.system == "connection" and g["dim"] != 3:
        raise ConfigError("grid.dim", "the connection flow needs a 3D grid")
    if abs(ini["metric_amplitude"]) >= 1.0:
        raise ConfigError("initial.metric_amplitude", "must be below 1 for a positive-definite metric")
    if ini["preset"] == "space-form" and flow["synth_K"] == "none":
        raise ConfigError("flow.synth_K", "the space-form preset needs a curvature value")
    if ini["target_rank"] < 1 or ini["fiber_rank"] < 1:
        raise ConfigError("initial.target_rank", "ranks must be >= 1")


def default_scenario(settings: dict[str, Any] | None = None) -> ScenarioConfig:
    return parse_scenario("", settings)


def load_scenario(path: str | Path, settings: dict[str, Any] | None = None) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"scenario file {path} does not exist")
    cfg = parse_scenario(path.read_text(), settings)
    logger.info("loaded scenario %r (%s) from %s", cfg.name, cfg.system, path)
    return cfg


def dump_scenario(cfg: ScenarioConfig) -> str:
    schema = scenario_schema(cfg.settings)
    parser = _parser()
    for section, options in schema.items():
        parser[section] = {key: option.format(cfg.values[section][key]) for key, option in options.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# --------------------------------------------------------------------------- initial states

def build_grid(cfg: ScenarioConfig) -> Grid:
    g = cfg["grid"]
    return Grid.uniform(g["dim"], g["points"], g["period"])


def _profile(grid: Grid, ini: dict[str, Any], rng: np.random.Generator) -> np.ndarray:
    """Zero-mean perturbation profile of sup size ``amplitude``."""
    preset = ini["preset"]
    if preset in ("flat", "fixed-point", "space-form", "file"):
        return np.zeros(grid.points)
    x = grid.coordinates()
    k = 2.0 * np.pi / grid.periods[0]
    if preset == "sin-bump":
        out = sum(np.sin(ini["mode"] * k * xa) for xa in x) / grid.dim
    else:
        out = np.zeros(grid.points)
        for xa in x:
            for j in range(1, ini["mode"] + 1):
                out += rng.standard_normal() * np.sin(j * k * xa + rng.uniform(0.0, 2.0 * np.pi)) / j
    peak = float(np.max(np.abs(out)))
    return ini["amplitude"] * out / peak if peak > 0 else out


def _initial_metric(grid: Grid, ini: dict[str, Any]) -> SymTensor2Field:
    if ini["preset"] == "file" and ini["g_file"]:
        g = load_field(ini["g_file"])
        if not isinstance(g, SymTensor2Field) or g.grid != grid:
            raise ConfigError("initial.g_file", "file does not hold a metric on the scenario grid")
        return g
    k = 2.0 * np.pi / grid.periods[0]
    conformal = 1.0 + ini["metric_amplitude"] * np.cos(k * grid.coordinates()[0])
    return SymTensor2Field(grid, conformal[..., None, None] * np.eye(grid.dim))


def build_initial_state(cfg: ScenarioConfig) -> FlowState:
    grid = build_grid(cfg)
    ini, flow = cfg["initial"], cfg["flow"]
    rng = np.random.default_rng(cfg.seed)
    g = _initial_metric(grid, ini)
    system = cfg.system

    if system == "warped":
        if ini["preset"] == "file" and ini["phi_file"]:
            phi = load_field(ini["phi_file"])
            if not isinstance(phi, ScalarField) or phi.grid != grid:
                raise ConfigError("initial.phi_file", "file does not hold a scalar on the scenario grid")
        else:
            phi = ScalarField(grid, ini["phi0"] + _profile(grid, ini, rng))
        state = WarpedState(g, phi, mu=flow["mu"])
    elif system == "hrf":
        target = TargetSpace(ini["target"], ini["target_rank"])
        N = target.rank
        if target.kind == "euclidean":
            values = np.stack([ini["phi0"] + _profile(grid, ini, rng) for _ in range(N)], axis=-1)
        else:
            values = np.broadcast_to(np.eye(N), grid.points + (N, N)).copy()
            values[..., 0, 0] += _profile(grid, ini, rng)
        state = HRFState(g, MapField(grid, target, values))
    elif system == "invariant":
        N = ini["fiber_rank"]
        A = VecOneFormField.zeros(grid, N).values
        A[..., 0, 0] = _profile(grid, ini, rng)
        G = np.broadcast_to(np.eye(N), grid.points + (N, N)).copy()
        G[..., 0, 0] += 0.5 * _profile(grid, ini, rng)
        state = InvariantState(g, VecOneFormField(grid, A), FiberMetricField(grid, G))
    else:
        state = ConnectionState(g, ThreeFormField(grid, ini["phi0"] + _profile(grid, ini, rng)))
    logger.info("built %s initial state (%s) on grid %s", system, ini["preset"], grid.points)
    return state


def _average(phi: ScalarField, g: SymTensor2Field) -> float:
    vol = build_metric_state(g).vol_density
    return integrate(phi, vol) / integrate(ScalarField.constant(phi.grid, 1.0), vol)


def build_params(cfg: ScenarioConfig, state: FlowState) -> FlowParams:
    flow = cfg["flow"]
    grid = state.grid
    synth = None
    lam = flow["lam"]
    if flow["synth_K"] != "none":
        synth = SyntheticCurvature.space_form(flow["synth_K"], grid.dim)
        lam = synth.lam
    reference = None
    if synth is not None or flow["gauge"] == "deturck":
        reference = build_metric_state(SymTensor2Field.identity(grid))
    s = -2.0 * lam if flow["s"] == "auto" else float(flow["s"])
    phi_avg0 = _average(state.phi, state.g) if isinstance(state, WarpedState) else 0.0
    return FlowParams(
        coupling=CouplingSchedule(flow["c0"], flow["rho"]),
        s=s,
        lam=lam,
        m=flow["m"],
        phi_avg0=phi_avg0,
        gauge=flow["gauge"],
        reference=reference,
        synth=synth,
        normalized=flow["normalized"],
        pre_gauge=flow["pre_gauge"],
    )


def build_stepper(cfg: ScenarioConfig, state: FlowState) -> StepperConfig:
    """StepperConfig with ``dt = auto`` resolved to an even split of t_end under the CFL limit."""
    st = cfg["stepper"]
    dt = st["dt"]
    if dt == "auto":
        limit = AUTO_DT_SAFETY * st["cfl"] * state.grid.h_min ** 2 / max_diffusivity(state)
        n = max(1, math.ceil(st["t_end"] / limit))
        dt = st["t_end"] / n if st["t_end"] > 0 else limit
    return StepperConfig(dt=float(dt), t_end=st["t_end"], cfl=st["cfl"], record_every=st["record_every"])
