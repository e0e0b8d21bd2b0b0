"""Scenario description, strict JSON loading and named presets.

A scenario is a JSON object with the optional sections ``sea``, ``usv``,
``uav``, ``noise``, ``mpc``, ``fsm`` and ``sim`` plus ``name`` and ``seed``.
Every section falls back to defaults; unknown keys anywhere are rejected.
See the README for the full schema.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ScenarioError
from .fsm import GuardThresholds, TouchdownConfig
from .mpc import MpcLimits, ReferenceConfig, StageWeights
from .sea import EstimateNoise, WaveComponent, check_wave_set
from .uav import UavParams

# relative amplitude, relative period, direction [rad], phase [rad] of the three components
_RECIPE = ((1.0, 1.0, 0.0, 0.0), (0.85, 1.12, 0.35, 2.1), (0.7, 0.9, -0.45, 4.2))

# peak amplitude [m] and period [s] of the dominant component
SEA_PRESETS = {
    "Flat": (0.0, 5.0),
    "Calm": (0.02, 3.0),
    "Slight": (0.25, 4.0),
    "Moderate": (0.5, 5.0),
    "Rough": (0.9, 7.0),
}

# significant wave height bands [m] of the named sea states
SEA_STATE_BANDS = {
    "Calm": (0.0, 0.1),
    "Smooth": (0.1, 0.5),
    "Slight": (0.5, 1.25),
    "Moderate": (1.25, 2.5),
    "Rough": (2.5, 4.0),
}


def preset_waves(amplitude: float, period: float, steepness: float = 0.5) -> list[WaveComponent]:
    """Three deep-water components spread in direction and period around the dominant one."""
    if amplitude <= 0:
        return []
    waves = [
        WaveComponent.deep_water(amplitude * ra, period * rt, direction=d, phase=p, steepness=steepness)
        for ra, rt, d, p in _RECIPE
    ]
    check_wave_set(waves)
    return waves


@dataclass(frozen=True)
class WaveSpec:
    amplitude: float
    period: float
    direction: float = 0.0
    phase: float = 0.0
    steepness: float = 0.5

    def component(self) -> WaveComponent:
        return WaveComponent.deep_water(self.amplitude, self.period, self.direction, self.phase, self.steepness)


@dataclass(frozen=True)
class SeaSpec:
    preset: str | None = "Moderate"
    amplitude: float | None = None
    period: float | None = None
    components: tuple = ()

    def waves(self) -> list[WaveComponent]:
        if self.components:
            waves = [c.component() for c in self.components]
            check_wave_set(waves)
            return waves
        if self.amplitude is not None:
            return preset_waves(self.amplitude, self.period if self.period is not None else 5.0)
        if self.preset not in SEA_PRESETS:
            raise ScenarioError(f"unknown sea preset {self.preset!r}; choose from {sorted(SEA_PRESETS)}")
        return preset_waves(*SEA_PRESETS[self.preset])


@dataclass(frozen=True)
class UsvSpec:
    mode: str = "drift"
    current: tuple = (0.3, 0.0)
    speed: float = 2.0
    side: float = 60.0
    deck_height: float = 1.3
    deck_length: float = 2.5
    deck_width: float = 1.7
    hull_length: float = 5.0
    hull_width: float = 2.5
    random_heading: bool = True

    def __post_init__(self):
        if self.mode not in ("drift", "waypoints"):
            raise ScenarioError(f"usv.mode must be 'drift' or 'waypoints', got {self.mode!r}")


@dataclass(frozen=True)
class UavStartSpec:
    distance: tuple = (40.0, 90.0)
    altitude: float = 2.0
    random_heading: bool = True

    def __post_init__(self):
        lo, hi = self.distance
        if lo < 0 or hi < lo:
            raise ScenarioError("uav.distance must be an increasing non-negative pair")


@dataclass(frozen=True)
class MpcSpec:
    weights: StageWeights = field(default_factory=StageWeights)
    limits: MpcLimits = field(default_factory=MpcLimits)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)
    horizon: int = 20
    step: float = 0.1
    nav_rate: float = 10.0
    follow_rate: float = 50.0


@dataclass(frozen=True)
class FsmSpec:
    thresholds: GuardThresholds = field(default_factory=GuardThresholds)
    touchdown: TouchdownConfig = field(default_factory=TouchdownConfig)


@dataclass(frozen=True)
class SimSpec:
    plant_dt: float = 0.002
    usv_dt: float = 0.01
    timeout: float = 180.0
    log_rate: float = 10.0
    post_touchdown: float = 0.5
    wave_time_offset: tuple = (0.0, 600.0)

    def __post_init__(self):
        if not (self.plant_dt > 0 and self.usv_dt >= self.plant_dt and self.timeout > 0 and self.log_rate > 0):
            raise ScenarioError("invalid sim timing")
        ratio = self.usv_dt / self.plant_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ScenarioError("usv_dt must be a multiple of plant_dt")


@dataclass(frozen=True)
class Scenario:
    name: str = "moderate-drift"
    seed: int = 0
    sea: SeaSpec = field(default_factory=SeaSpec)
    usv: UsvSpec = field(default_factory=UsvSpec)
    uav: UavStartSpec = field(default_factory=UavStartSpec)
    uav_params: UavParams = field(default_factory=UavParams)
    noise: EstimateNoise = field(default_factory=EstimateNoise)
    mpc: MpcSpec = field(default_factory=MpcSpec)
    fsm: FsmSpec = field(default_factory=FsmSpec)
    sim: SimSpec = field(default_factory=SimSpec)

    def to_dict(self) -> dict:
        return _to_plain(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if not isinstance(d, dict):
            raise ScenarioError("scenario must be a JSON object")
        return _from_plain(cls, d, "scenario")

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


# nested dataclass fields and element types of tuple-of-dataclass fields
_NESTED = {
    (Scenario, "sea"): SeaSpec,
    (Scenario, "usv"): UsvSpec,
    (Scenario, "uav"): UavStartSpec,
    (Scenario, "uav_params"): UavParams,
    (Scenario, "noise"): EstimateNoise,
    (Scenario, "mpc"): MpcSpec,
    (Scenario, "fsm"): FsmSpec,
    (Scenario, "sim"): SimSpec,
    (MpcSpec, "weights"): StageWeights,
    (MpcSpec, "limits"): MpcLimits,
    (MpcSpec, "reference"): ReferenceConfig,
    (FsmSpec, "thresholds"): GuardThresholds,
    (FsmSpec, "touchdown"): TouchdownConfig,
}
_ELEMENTS = {(SeaSpec, "components"): WaveSpec}


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _from_plain(cls, d, path):
    if not isinstance(d, dict):
        raise ScenarioError(f"{path} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ScenarioError(f"unknown key(s) in {path}: {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in d:
            continue
        v = d[f.name]
        sub = _NESTED.get((cls, f.name))
        elem = _ELEMENTS.get((cls, f.name))
        if sub is not None:
            v = _from_plain(sub, v, f"{path}.{f.name}")
        elif elem is not None:
            v = tuple(_from_plain(elem, e, f"{path}.{f.name}[{i}]") for i, e in enumerate(v))
        elif cls is StageWeights and f.name == "faa":
            v = tuple((int(t[0]), float(t[1]), float(t[2])) for t in v)
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid {path}: {exc}") from exc


def load_scenario(source) -> Scenario:
    """Load from a JSON file path or the name of a bundled preset (e.g. ``moderate_drift``)."""
    p = Path(source)
    if p.suffix != ".json" and not p.exists():
        name = str(source)
        if name not in bundled_scenarios():
            raise ScenarioError(f"no scenario file or preset named {name!r}")
        text = resources.files("deckland").joinpath("presets", f"{name}.json").read_text(encoding="utf-8")
    else:
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {p}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    return Scenario.from_dict(doc)


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(s.to_dict(), indent=2), encoding="utf-8")


def bundled_scenarios() -> list[str]:
    root = resources.files("deckland").joinpath("presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json") and p.name != "comparison_grid.json")


def comparison_grid() -> list[Scenario]:
    """Reconstructed amplitude/period grid for the method comparison (not ground truth)."""
    text = resources.files("deckland").joinpath("presets", "comparison_grid.json").read_text(encoding="utf-8")
    doc = json.loads(text)
    base = Scenario.from_dict(doc["base"])
    out = []
    for a, T in doc["setups"]:
        out.append(base.replace(name=f"grid-A{a:g}-T{T:g}", sea=SeaSpec(preset=None, amplitude=a, period=T)))
    return out
