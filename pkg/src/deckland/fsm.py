"""Landing mission state machine and touchdown detection."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class FlightState(str, Enum):
    IDLE = "Idle"
    GET_ALTITUDE = "GetAltitude"
    APPROACH = "Approach"
    TRACKING = "Tracking"
    TRACKING_STABLE = "TrackingStable"
    DESCENT = "Descent"
    FLARE = "Flare"
    LANDED = "Landed"


class Phase(str, Enum):
    NAVIGATION = "Navigation"
    FOLLOW = "Follow"
    LANDING = "Landing"


_PHASE = {
    FlightState.IDLE: Phase.NAVIGATION,
    FlightState.GET_ALTITUDE: Phase.NAVIGATION,
    FlightState.APPROACH: Phase.NAVIGATION,
    FlightState.TRACKING: Phase.FOLLOW,
    FlightState.TRACKING_STABLE: Phase.FOLLOW,
    FlightState.DESCENT: Phase.LANDING,
    FlightState.FLARE: Phase.LANDING,
    FlightState.LANDED: Phase.LANDING,
}


def phase_of(state: FlightState) -> Phase:
    return _PHASE[FlightState(state)]


@dataclass(frozen=True)
class LandingConditions:
    distance_ok: bool = False
    prediction_feasible: bool = False
    covariance_ok: bool = False

    def all(self) -> bool:
        return self.distance_ok and self.prediction_feasible and self.covariance_ok


@dataclass(frozen=True)
class GuardInputs:
    uav_ready: bool = False
    altitude_reached: bool = False
    usv_visible: bool = False
    stable_above: bool = False
    landing_conditions: LandingConditions = field(default_factory=LandingConditions)
    flare_height_reached: bool = False
    touchdown: bool = False
    measurement_timeout: bool = False


@dataclass(frozen=True)
class Transition:
    src: FlightState
    dst: FlightState
    reason: str


@dataclass(frozen=True)
class GuardThresholds:
    """Numeric limits the harness uses to turn measurements into guard flags."""

    altitude_tolerance: float = 1.0
    visibility_radius: float = 10.0
    stable_distance: float = 0.3
    stable_time: float = 1.0
    landing_distance: float = 1.0
    covariance_limit: float = 0.05
    flare_height: float = 0.5
    measurement_timeout: float = 0.5

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def step(state: FlightState, inputs: GuardInputs) -> tuple[FlightState, list[Transition]]:
    """One evaluation of the transition graph; combinations without an edge keep the state."""
    s = FlightState(state)
    g = inputs
    lost = g.measurement_timeout or not g.landing_conditions.all()
    nxt, why = s, ""
    if s is FlightState.IDLE:
        if g.uav_ready:
            nxt, why = FlightState.GET_ALTITUDE, "uav ready"
    elif s is FlightState.GET_ALTITUDE:
        if g.altitude_reached:
            nxt, why = FlightState.APPROACH, "altitude reached"
    elif s is FlightState.APPROACH:
        if g.usv_visible:
            nxt, why = FlightState.TRACKING, "usv visible"
    elif s is FlightState.TRACKING:
        if g.stable_above:
            nxt, why = FlightState.TRACKING_STABLE, "stable above deck"
    elif s is FlightState.TRACKING_STABLE:
        if g.landing_conditions.all():
            nxt, why = FlightState.DESCENT, "landing conditions met"
    elif s is FlightState.DESCENT:
        if lost:
            nxt, why = FlightState.TRACKING, "measurement timeout" if g.measurement_timeout else "landing conditions lost"
        elif g.flare_height_reached:
            nxt, why = FlightState.FLARE, "flare height reached"
    elif s is FlightState.FLARE:
        if g.touchdown:
            nxt, why = FlightState.LANDED, "touchdown"
        elif lost or not g.usv_visible:
            nxt, why = FlightState.TRACKING, "deck lost"
    if nxt is s:
        return s, []
    return nxt, [Transition(s, nxt, why)]


def retreat(state: FlightState, reason: str = "trajectory generator abort") -> tuple[FlightState, list[Transition]]:
    """Forced return to Tracking from the landing states (e.g. after repeated solver failures)."""
    s = FlightState(state)
    if s in (FlightState.DESCENT, FlightState.FLARE):
        return FlightState.TRACKING, [Transition(s, FlightState.TRACKING, reason)]
    return s, []


@dataclass(frozen=True)
class TouchdownEvidence:
    thrust_estimate: float
    vertical_accel_spike: float
    range_to_deck: float

    def __post_init__(self):
        if self.range_to_deck < 0:
            raise ValueError("range to deck must be non-negative")


@dataclass(frozen=True)
class TouchdownConfig:
    thrust_fraction: float = 0.5
    max_range: float = 0.06
    accel_spike: float = 8.0
    ticks: int = 3


def detect_touchdown(ev: TouchdownEvidence, cfg: TouchdownConfig = TouchdownConfig()) -> bool:
    """Instantaneous contact test: low thrust or an impact spike, either one close to the deck."""
    near = ev.range_to_deck < cfg.max_range
    return near and (ev.thrust_estimate < cfg.thrust_fraction or ev.vertical_accel_spike >= cfg.accel_spike)


class TouchdownDetector:
    """Latches once the contact test holds for ``cfg.ticks`` consecutive samples."""

    def __init__(self, cfg: TouchdownConfig = TouchdownConfig()):
        self.cfg = cfg
        self.count = 0
        self.latched = False

    def update(self, ev: TouchdownEvidence) -> bool:
        if self.latched:
            return True
        self.count = self.count + 1 if detect_touchdown(ev, self.cfg) else 0
        self.latched = self.count >= self.cfg.ticks
        return self.latched
