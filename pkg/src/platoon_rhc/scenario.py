"""Scenario definition, file loading, overrides and bundled presets."""
from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .controller import ControllerConfig
from .domain import PlatoonCriteria, RoadLimits
from .errors import ConfigError
from .estimation import DEFAULT_GAMMA0, DEFAULT_P0_SCALE
from .hdv import OvmParams

PRESETS = ("fig3-no-pv", "fig4-with-pv", "table3-scaling", "fig6-sensitivity")
SWEEP_AXES = ("alpha", "beta", "v_d", "rho", "N")


@dataclass(frozen=True)
class InitialConditions:
    """Initial speeds and spacing; explicit ``positions``/``speeds`` win when given.

    ``positions`` and ``speeds`` list the platoon members front to back, CAV
    first.  Generated headways are ``headway_factor`` times each follower's
    safe gap.
    """

    cav_speed: float = 20.0
    hdv_speed: float = 20.0
    headway_factor: float = 1.5
    pv_speed: float = 20.0
    pv_headway_factor: float = 1.5
    positions: tuple[float, ...] | None = None
    speeds: tuple[float, ...] | None = None


@dataclass(frozen=True)
class EstimatorConfig:
    gamma0: tuple[float, float, float] = DEFAULT_GAMMA0
    p0_scale: float = DEFAULT_P0_SCALE
    xi: float = 1.0

    def __post_init__(self):
        if len(self.gamma0) != 3:
            raise ConfigError("gamma0 needs three entries")
        if self.p0_scale <= 0:
            raise ConfigError("p0_scale must be positive")
        if not 0.0 < self.xi <= 1.0:
            raise ConfigError("forgetting factor must lie in (0, 1]")


@dataclass(frozen=True)
class LaneChangeEvent:
    time: float
    kind: str  # "departure" or "insertion"
    id: int

    def __post_init__(self):
        if self.kind not in ("departure", "insertion"):
            raise ConfigError(f"unknown lane-change kind {self.kind!r}")


@dataclass(frozen=True)
class SweepSpec:
    axis: str = "N"
    values: tuple[float, ...] = ()
    seeds: tuple[int, ...] = (0,)


@dataclass(frozen=True)
class Scenario:
    name: str = "custom"
    n_vehicles: int = 5
    has_pv: bool = False
    duration: float = 60.0
    seed: int = 0
    rho_cav: float = 1.5
    perturbation: float = 0.3
    pv_profile: tuple[tuple[float, float], ...] = ()
    initial: InitialConditions = field(default_factory=InitialConditions)
    ovm: OvmParams = field(default_factory=OvmParams)
    limits: RoadLimits = field(default_factory=RoadLimits)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    criteria: PlatoonCriteria = field(default_factory=PlatoonCriteria)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    events: tuple[LaneChangeEvent, ...] = ()
    sweep: SweepSpec | None = None

    def __post_init__(self):
        if self.n_vehicles < 2:
            raise ConfigError("need the CAV and at least one HDV (n_vehicles >= 2)")
        if self.duration < 0 or not math.isfinite(self.duration):
            raise ConfigError("duration must be finite and non-negative")
        if not 0.0 <= self.perturbation < 1.0:
            raise ConfigError("perturbation fraction must lie in [0, 1)")
        if self.rho_cav <= 0:
            raise ConfigError("rho_cav must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.has_pv and not self.pv_profile:
            raise ConfigError("a scenario with a PV needs a pv_profile")
        times = [k[0] for k in self.pv_profile]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ConfigError("pv_profile knot times must be non-decreasing")
        self.ovm.validate_against(self.limits)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.controller.tau))

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


_NESTED = {
    "initial": InitialConditions,
    "ovm": OvmParams,
    "limits": RoadLimits,
    "controller": ControllerConfig,
    "criteria": PlatoonCriteria,
    "estimator": EstimatorConfig,
    "sweep": SweepSpec,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _coerce(cls, name: str, value, where: str):
    kinds = {f.name: f for f in dataclasses.fields(cls)}
    f = kinds[name]
    default = (
        f.default if f.default is not dataclasses.MISSING else
        f.default_factory() if f.default_factory is not dataclasses.MISSING else None
    )
    if value is None:
        return None
    if isinstance(default, bool) or f.type in ("bool",):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool) and f.type == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if f.type.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if f.type == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return _tupled(value)


def _build(cls, data: Any, where: str):
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a table, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        if cls is Scenario and key in _NESTED and value is not None:
            kwargs[key] = _build(_NESTED[key], value, path)
        elif cls is Scenario and key == "events":
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}: expected a list of tables")
            kwargs[key] = tuple(
                _build(LaneChangeEvent, ev, f"{path}[{i}]") for i, ev in enumerate(value)
            )
        else:
            kwargs[key] = _coerce(cls, key, value, path)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'scenario'}: {exc}") from exc


def scenario_from_dict(data: dict) -> Scenario:
    return _build(Scenario, data, "")


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return scenario_from_dict(data)


def load_preset(name: str) -> Scenario:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("platoon_rhc").joinpath("presets").joinpath(f"{name}.toml").read_text("utf-8")
    return scenario_from_dict(tomllib.loads(text))


def resolve_scenario(source: str) -> Scenario:
    """A preset name or a path to a TOML scenario file."""
    if source in PRESETS:
        return load_preset(source)
    return load_scenario(source)


def parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def with_overrides(sc: Scenario, overrides: dict[str, Any]) -> Scenario:
    """Rebuild ``sc`` with dotted-path overrides such as ``{"ovm.alpha": 0.6}``."""
    data = copy.deepcopy(asdict(sc))
    for dotted, value in overrides.items():
        keys = dotted.split(".")
        node = data
        for k in keys[:-1]:
            if k not in node:
                raise ConfigError(f"unknown override path {dotted!r}")
            if node[k] is None and k in _NESTED:
                node[k] = asdict(_NESTED[k]())
            node = node[k]
            if not isinstance(node, dict):
                raise ConfigError(f"override path {dotted!r} descends into a scalar")
        if keys[-1] not in node:
            raise ConfigError(f"unknown override path {dotted!r}")
        node[keys[-1]] = value
    return scenario_from_dict(data)


def apply_axis(sc: Scenario, axis: str, value: float) -> Scenario:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if axis == "N":
        if float(value) != int(value):
            raise ConfigError(f"N must be an integer, got {value}")
        return with_overrides(sc, {"n_vehicles": int(value)})
    return with_overrides(sc, {f"ovm.{axis}": float(value)})
