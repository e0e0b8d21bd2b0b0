"""Closed-loop landing episodes, Monte Carlo runs, touchdown metrics and result files."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import fsm
from .fsm import FlightState, GuardInputs, LandingConditions, Phase, TouchdownDetector, TouchdownEvidence, phase_of
from .mpc import TrajectoryGenerator
from .scenario import Scenario
from .sea import (LinearPropagator, UsvDeckState, UsvModelParams, WaypointController, WaypointGains,
                  deck_frame_offset, deck_point_height, emulate_estimate, square_path, sync_deck_to_waves,
                  usv_step, wave_displacement, wrap_angle)
from .uav import NX, hover_command, hover_state, rk4_step

METRICS = (
    "position_dev",
    "vertical_impact_vel",
    "horizontal_vel_dev",
    "roll_dev",
    "pitch_dev",
    "yaw_dev",
    "landing_duration",
    "total_time",
)

# (src, dst) pairs the mission graph allows, including forced retreats
LEGAL_EDGES = {
    (FlightState.IDLE, FlightState.GET_ALTITUDE),
    (FlightState.GET_ALTITUDE, FlightState.APPROACH),
    (FlightState.APPROACH, FlightState.TRACKING),
    (FlightState.TRACKING, FlightState.TRACKING_STABLE),
    (FlightState.TRACKING_STABLE, FlightState.DESCENT),
    (FlightState.DESCENT, FlightState.TRACKING),
    (FlightState.DESCENT, FlightState.FLARE),
    (FlightState.FLARE, FlightState.LANDED),
    (FlightState.FLARE, FlightState.TRACKING),
}


@dataclass
class TouchdownReport:
    seed: int
    success: bool
    touchdown: bool
    inside_deck: bool
    timed_out: bool
    failure: str
    position_dev: float
    vertical_impact_vel: float
    horizontal_vel_dev: float
    roll_dev: float
    pitch_dev: float
    yaw_dev: float
    landing_duration: float
    total_time: float
    aborts: int

    def to_row(self) -> dict:
        return {f.name: _fmt(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_row(cls, row: dict) -> "TouchdownReport":
        kw = {}
        for f in fields(cls):
            v = row[f.name]
            if f.type in ("bool", bool):
                kw[f.name] = v in ("True", "true", "1", True)
            elif f.type in ("int", int):
                kw[f.name] = int(v)
            elif f.type in ("float", float):
                kw[f.name] = float(v)
            else:
                kw[f.name] = v
        return cls(**kw)


CSV_COLUMNS = tuple(f.name for f in fields(TouchdownReport))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class Snapshot:
    t: float
    uav: np.ndarray
    deck: np.ndarray


@dataclass
class EpisodeLog:
    seed: int
    scenario: str
    t: list = field(default_factory=list)
    uav: list = field(default_factory=list)
    deck: list = field(default_factory=list)
    deck_est: list = field(default_factory=list)
    state: list = field(default_factory=list)
    reference: list = field(default_factory=list)
    traj_head: list = field(default_factory=list)
    command: list = field(default_factory=list)
    events: list = field(default_factory=list)
    contact: Snapshot | None = None
    final: Snapshot | None = None
    landing_entry: float | None = None
    timed_out: bool = False
    failure: str = ""
    aborts: int = 0
    deck_size: tuple = (2.5, 1.7)
    hull_size: tuple = (5.0, 2.5)
    tip_over_deg: float = 15.0
    max_limit_violation: float = 0.0
    # wall-clock, so kept in memory only: saved logs stay byte-identical per (scenario, seed)
    solve_times: list = field(default_factory=list)
    report: TouchdownReport | None = None

    def append(self, t, uav, deck, deck_est, state, reference, traj_head, command):
        self.t.append(float(t))
        self.uav.append(np.asarray(uav, dtype=float).tolist())
        self.deck.append(np.asarray(deck, dtype=float).tolist())
        self.deck_est.append(np.asarray(deck_est, dtype=float).tolist())
        self.state.append(FlightState(state).value)
        self.reference.append(np.asarray(reference, dtype=float).tolist())
        self.traj_head.append(np.asarray(traj_head, dtype=float).tolist())
        self.command.append(np.asarray(command, dtype=float).tolist())

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            if f.name == "solve_times":
                continue
            v = getattr(self, f.name)
            if isinstance(v, Snapshot):
                v = {"t": v.t, "uav": v.uav.tolist(), "deck": v.deck.tolist()}
            elif isinstance(v, TouchdownReport):
                v = asdict(v)
            elif isinstance(v, tuple):
                v = list(v)
            d[f.name] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeLog":
        d = dict(d)
        for k in ("contact", "final"):
            if d.get(k) is not None:
                s = d[k]
                d[k] = Snapshot(s["t"], np.array(s["uav"]), np.array(s["deck"]))
        if d.get("report") is not None:
            d["report"] = TouchdownReport(**d["report"])
        d["deck_size"] = tuple(d["deck_size"])
        d["hull_size"] = tuple(d["hull_size"])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), allow_nan=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EpisodeLog":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ------------------------------------------------------------------ metrics


def touchdown_metrics(log: EpisodeLog) -> TouchdownReport:
    """Deviations between true UAV and deck states at contact (or at the end of a failed run)."""
    snap = log.contact if log.contact is not None else log.final
    if snap is None:
        raise ValueError("log holds neither a contact nor a final snapshot")
    uav, deck = np.asarray(snap.uav), np.asarray(snap.deck)
    deck_state = UsvDeckState(deck[:6], deck[6:12], np.zeros(0))
    off = deck_frame_offset(deck_state, uav[0:2])
    L, W = log.deck_size
    inside = bool(abs(off[0]) <= L / 2 and abs(off[1]) <= W / 2)
    roll_dev = math.degrees(wrap_angle(uav[3] - deck[3]))
    pitch_dev = math.degrees(wrap_angle(uav[4] - deck[4]))
    yaw_dev = math.degrees(wrap_angle(uav[5] - deck[5]))
    touchdown = log.contact is not None
    if touchdown and log.landing_entry is not None:
        landing_duration = snap.t - log.landing_entry
    else:
        landing_duration = 0.0
    upright = abs(roll_dev) <= log.tip_over_deg and abs(pitch_dev) <= log.tip_over_deg
    success = touchdown and inside and upright
    failure = log.failure
    if touchdown and not success:
        failure = "outside_deck" if not inside else "tip_over"
    return TouchdownReport(
        seed=int(log.seed),
        success=bool(success),
        touchdown=bool(touchdown),
        inside_deck=inside,
        timed_out=bool(log.timed_out),
        failure=failure,
        position_dev=float(np.hypot(*off)),
        vertical_impact_vel=float(deck[8] - uav[8]),
        horizontal_vel_dev=float(np.hypot(uav[6] - deck[6], uav[7] - deck[7])),
        roll_dev=float(roll_dev),
        pitch_dev=float(pitch_dev),
        yaw_dev=float(yaw_dev),
        landing_duration=float(landing_duration),
        total_time=float(snap.t),
        aborts=int(log.aborts),
    )


# ------------------------------------------------------------------ episode


def _deck_at(usv: UsvDeckState, dt: float) -> UsvDeckState:
    """Deck pose extrapolated ``dt`` ahead with its current rates."""
    return UsvDeckState(usv.pose + usv.rates * dt, usv.rates, usv.wave_states, usv.t + dt)


def _limit_violation(states: np.ndarray, limits) -> float:
    idx, lo, hi = limits.state_bounds()
    v = states[:, idx]
    return float(max(np.max(lo - v), np.max(v - hi), 0.0))


def run_episode(s: Scenario, seed: int | None = None, record: bool = True) -> EpisodeLog:
    """Simulate one landing attempt; deterministic for a given (scenario, seed)."""
    seed = int(s.seed if seed is None else seed)
    init_rng, noise_rng = (np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(2))
    P = s.uav_params
    th = s.fsm.thresholds
    h = s.sim.plant_dt
    n_usv = int(round(s.sim.usv_dt / h))
    nav_every = max(1, int(round(1.0 / (s.mpc.nav_rate * h))))
    follow_every = max(1, int(round(1.0 / (s.mpc.follow_rate * h))))
    log_every = max(1, int(round(1.0 / (s.sim.log_rate * h))))
    n_end = int(round(s.sim.timeout / h))

    waves = s.sea.waves()
    t_off = float(init_rng.uniform(*s.sim.wave_time_offset))
    moving = s.usv.mode == "waypoints"
    params = UsvModelParams.catamaran(waves, s.usv.deck_height, current=(0.0, 0.0) if moving else s.usv.current)
    M_inv = params.M_inv
    usv_yaw = float(init_rng.uniform(-math.pi, math.pi)) if (s.usv.random_heading and not moving) else 0.0
    usv = UsvDeckState.at_rest(params, (0.0, 0.0), usv_yaw)
    controller = None
    if moving:
        controller = WaypointController(square_path((0.0, s.usv.side / 2.0), s.usv.side),
                                        WaypointGains(speed=s.usv.speed))
        usv.rates[0] = s.usv.speed
    usv = sync_deck_to_waves(usv, waves, t_off, params)
    t_usv = 0.0

    r = float(init_rng.uniform(*s.uav.distance))
    ang = float(init_rng.uniform(-math.pi, math.pi))
    yaw = float(init_rng.uniform(-math.pi, math.pi)) if s.uav.random_heading else 0.0
    x = hover_state((r * math.cos(ang), r * math.sin(ang), s.uav.altitude), yaw)
    u = hover_command(P)

    gen = TrajectoryGenerator(P, s.mpc.weights, s.mpc.limits, s.mpc.reference, s.mpc.horizon, s.mpc.step)
    N, step_dt = s.mpc.horizon, s.mpc.step
    prop = LinearPropagator(params.without_horizontal_damping(), step_dt)
    detector = TouchdownDetector(s.fsm.touchdown)
    hover_thrust = P.mass * P.g

    log = EpisodeLog(seed=seed, scenario=s.name, deck_size=(s.usv.deck_length, s.usv.deck_width),
                     hull_size=(s.usv.hull_length, s.usv.hull_width))
    state = FlightState.IDLE
    last_est, last_valid_t = None, -math.inf
    stable_since = None
    traj = None
    ref_head = np.zeros(NX)
    next_plan = 0
    attached = None  # hull-frame offset and height after contact
    spike, vz_prev = 0.0, x[8]
    L2, W2 = s.usv.hull_length / 2, s.usv.hull_width / 2

    def transition(events, t):
        nonlocal state
        for ev in events:
            log.events.append({"t": float(t), "src": ev.src.value, "dst": ev.dst.value, "reason": ev.reason})
            if ev.dst is FlightState.DESCENT:
                log.landing_entry = float(t)
            if ev.dst is FlightState.TRACKING and ev.src in (FlightState.DESCENT, FlightState.FLARE):
                log.aborts += 1

    i = 0
    while True:
        t = i * h
        if i and i % n_usv == 0:
            act = controller(usv, s.sim.usv_dt) if controller is not None else None
            usv = usv_step(usv, params, act, s.sim.usv_dt, M_inv=M_inv)
            usv = sync_deck_to_waves(usv, waves, t + t_off, params)
            t_usv = t

        if i == next_plan:
            est, valid = emulate_estimate(usv, s.noise, noise_rng)
            if valid:
                last_est, last_valid_t = est, t
            stale = t - last_valid_t
            if last_est is not None:
                offset = int(round(stale / step_dt))
                pred = np.array([d.full_state12() for d in prop.roll_out(last_est, N + offset)[offset:]])
                deck_est = last_est
            else:
                pred, deck_est = None, None

            g = _guards(x, deck_est, stale, state, traj, s, th, detector, t, stable_since)
            stable_since = g.pop("stable_since")
            new_state, events = fsm.step(state, GuardInputs(**g))
            transition(events, t)
            state = new_state

            if state is not FlightState.LANDED:
                traj = gen.generate(x, pred, state, t, u)
                log.solve_times.append(traj.solve_time)
                if not traj.degraded:
                    log.max_limit_violation = max(log.max_limit_violation, _limit_violation(traj.states, gen.limits))
                if traj.abort:
                    state, events = fsm.retreat(state)
                    transition(events, t)
                u = traj.command_at(t)
                ref_head = gen.last_reference.values[0]
            every = nav_every if phase_of(state) is Phase.NAVIGATION else follow_every
            next_plan = i + every

        if record and i % log_every == 0:
            est_vec = last_est.full_state12() if last_est is not None else np.full(NX, np.nan)
            head = x if traj is None else traj.states[0]
            log.append(t, x, _deck_at(usv, t - t_usv).full_state12(), np.nan_to_num(est_vec), state,
                       ref_head, head, u)

        if attached is not None:
            if state is FlightState.LANDED or t - log.contact.t >= s.sim.post_touchdown:
                break
        elif i >= n_end:
            log.timed_out = True
            log.failure = "timeout"
            break

        # plant
        t_next = t + h
        deck_now = _deck_at(usv, t_next - t_usv)
        if attached is None:
            x = rk4_step(x, u, P, h)
            if not np.all(np.isfinite(x)) or abs(x[4]) > 1.4 or abs(x[3]) > 1.4:
                log.failure = "unstable"
                break
            if x[2] < s.usv.deck_height + 4.0:
                deck_z = deck_point_height(deck_now, x[0:2])
                off = deck_frame_offset(deck_now, x[0:2])
                if x[2] <= deck_z and abs(off[0]) <= L2 and abs(off[1]) <= W2:
                    log.contact = Snapshot(t_next, x.copy(), deck_now.full_state12())
                    attached = off
                elif x[2] <= wave_displacement(x[0:2], t_next + t_off, waves)[1]:
                    log.failure = "water"
                    break
        else:
            c, sn = math.cos(deck_now.pose[5]), math.sin(deck_now.pose[5])
            x = x.copy()
            x[0:2] = deck_now.pose[0:2] + np.array([c * attached[0] - sn * attached[1],
                                                    sn * attached[0] + c * attached[1]])
            x[2] = deck_point_height(deck_now, x[0:2])
            x[3:5] = deck_now.pose[3:5]
            x[6:9] = deck_now.rates[0:3]
            x[9:12] = deck_now.rates[3:6]

        # touchdown evidence for the detector
        az = (x[8] - vz_prev) / h
        vz_prev = x[8]
        spike = max(0.9 * spike, abs(az))
        if state is FlightState.FLARE or attached is not None:
            rng_deck = max(0.0, x[2] - deck_point_height(deck_now, x[0:2]))
            thrust = P.k_T * float(np.sum(u)) / hover_thrust
            detector.update(TouchdownEvidence(thrust, spike, rng_deck))
        i += 1

    t_end = i * h
    log.final = Snapshot(t_end, x.copy(), _deck_at(usv, t_end - t_usv).full_state12())
    log.report = touchdown_metrics(log)
    return log


def _guards(x, deck_est: UsvDeckState | None, stale, state, traj, s: Scenario, th, detector, t, stable_since):
    ref = s.mpc.reference
    out = dict(uav_ready=True, altitude_reached=abs(x[2] - ref.h_a) <= th.altitude_tolerance,
               touchdown=detector.latched, measurement_timeout=stale > th.measurement_timeout)
    if deck_est is None:
        out.update(usv_visible=False, stable_above=False, landing_conditions=LandingConditions(),
                   flare_height_reached=False, stable_since=None)
        return out
    dist = float(np.hypot(*(x[0:2] - deck_est.pose[0:2])))
    rel = float(x[2] - deck_point_height(deck_est, x[0:2]))
    fresh = stale <= th.measurement_timeout
    near = dist <= th.stable_distance and abs(rel - ref.h_t) <= th.altitude_tolerance
    if near:
        stable_since = t if stable_since is None else stable_since
    else:
        stable_since = None
    cov = s.noise.position_rmse ** 2 + 0.05 * stale
    out.update(
        usv_visible=fresh and dist <= th.visibility_radius,
        stable_above=near and t - stable_since >= th.stable_time,
        landing_conditions=LandingConditions(
            distance_ok=dist <= th.landing_distance,
            prediction_feasible=traj is None or not traj.degraded,
            covariance_ok=cov <= th.covariance_limit,
        ),
        flare_height_reached=rel <= th.flare_height,
        stable_since=stable_since,
    )
    return out


# ------------------------------------------------------------------ statistics


def fit_normal(samples) -> tuple[float, float]:
    """Sample mean and unbiased standard deviation (zero for a single sample)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("need at least one sample")
    mu = float(np.mean(x))
    sigma = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return mu, sigma


@dataclass
class StatsReport:
    n_episodes: int
    success_rate: float
    touchdown_rate: float
    metrics: dict
    fractions: dict

    def to_dict(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "success_rate": self.success_rate,
            "touchdown_rate": self.touchdown_rate,
            "metrics": {k: None if v is None else {"mu": v[0], "sigma": v[1]} for k, v in self.metrics.items()},
            "fractions": dict(self.fractions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StatsReport":
        metrics = {k: None if v is None else (v["mu"], v["sigma"]) for k, v in d["metrics"].items()}
        return cls(d["n_episodes"], d["success_rate"], d["touchdown_rate"], metrics, dict(d["fractions"]))


@dataclass(frozen=True)
class StatsAccumulator:
    """Order-free collection of episode reports; ``+`` merges, the empty accumulator is the identity."""

    reports: tuple = ()

    def add(self, report: TouchdownReport) -> "StatsAccumulator":
        return self + StatsAccumulator((report,))

    def __add__(self, other: "StatsAccumulator") -> "StatsAccumulator":
        return StatsAccumulator(tuple(sorted(self.reports + other.reports, key=_report_key)))

    def report(self) -> StatsReport:
        return aggregate(self.reports)


def _report_key(r: TouchdownReport):
    return (r.seed, json.dumps(asdict(r), sort_keys=True))


def aggregate(reports) -> StatsReport:
    reps = sorted(reports, key=_report_key)
    n = len(reps)
    if n == 0:
        return StatsReport(0, 0.0, 0.0, {k: None for k in METRICS}, {})
    landed = [r for r in reps if r.success]
    metrics = {}
    for k in METRICS:
        vals = [getattr(r, k) for r in landed]
        metrics[k] = fit_normal(vals) if vals else None
    fractions = {
        "roll_within_5deg": sum(r.touchdown and abs(r.roll_dev) <= 5.0 for r in reps) / n,
        "pitch_within_5deg": sum(r.touchdown and abs(r.pitch_dev) <= 5.0 for r in reps) / n,
        "impact_below_1mps": sum(r.touchdown and r.vertical_impact_vel <= 1.0 for r in reps) / n,
        "success_within_60s": (sum(r.total_time <= 60.0 for r in landed) / len(landed)) if landed else 0.0,
        "timed_out": sum(r.timed_out for r in reps) / n,
    }
    return StatsReport(
        n_episodes=n,
        success_rate=len(landed) / n,
        touchdown_rate=sum(r.touchdown for r in reps) / n,
        metrics=metrics,
        fractions=fractions,
    )


def _episode_job(args):
    scenario, seed, log_dir = args
    log = run_episode(scenario, seed, record=log_dir is not None)
    if log_dir is not None:
        log.save(Path(log_dir) / f"episode_{seed}.json")
    return log.report


def episode_seeds(base_seed: int, n: int) -> list[int]:
    return [int(base_seed) + i for i in range(n)]


def run_monte_carlo(s: Scenario, n: int, base_seed: int | None = None, jobs: int = 1,
                    log_dir=None) -> tuple[StatsReport, list[TouchdownReport]]:
    """Run ``n`` seeded episodes (optionally in worker processes) and aggregate them."""
    if n < 1:
        raise ValueError("n must be >= 1")
    base = s.seed if base_seed is None else base_seed
    jobs_args = [(s, seed, log_dir) for seed in episode_seeds(base, n)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_episode_job, jobs_args))
    else:
        reports = [_episode_job(a) for a in jobs_args]
    reports.sort(key=_report_key)
    return aggregate(reports), reports


# ------------------------------------------------------------------ files


def write_episodes_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in sorted(reports, key=_report_key):
            w.writerow(r.to_row())


def read_episodes_csv(path) -> list[TouchdownReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != CSV_COLUMNS:
        raise ValueError(f"unexpected columns in {path}")
    return [TouchdownReport.from_row(r) for r in rows]


def write_stats_json(stats: StatsReport, path) -> None:
    Path(path).write_text(json.dumps(stats.to_dict(), indent=2), encoding="utf-8")


def read_stats_json(path) -> StatsReport:
    return StatsReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def audit_log(log: EpisodeLog, tol: float = 1e-6) -> list[str]:
    """Problems found in a finished log: illegal transitions, limit violations, time order."""
    problems = []
    for ev in log.events:
        edge = (FlightState(ev["src"]), FlightState(ev["dst"]))
        if edge not in LEGAL_EDGES:
            problems.append(f"illegal transition {edge[0].value} -> {edge[1].value} at t={ev['t']:.2f}")
    if log.max_limit_violation > tol:
        problems.append(f"trajectory limit violated by {log.max_limit_violation:.2e}")
    if any(b <= a for a, b in zip(log.t, log.t[1:])):
        problems.append("log timestamps are not strictly increasing")
    return problems
