"""Condensed linear MPC on input increments, used as a trajectory generator.

The discrete hover model ``x+ = A x + B u`` is augmented with the previous
input so that the decision variables are the increments ``du``::

    [x+]   [A  B] [x     ]   [B]
    [u ] = [0  I] [u_prev] + [I] du

Stacking the horizon gives ``X = Phi x_a0 + Gamma dU`` and the tracking cost
becomes a dense QP in ``dU`` alone.  The optimized increments are then fed
through the linear model to produce the full-state trajectory.

Inputs inside the MPC are per-rotor thrust deviations from hover [N]; the
emitted rotor commands are squared rotor speeds.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InsufficientPrediction, NoFallback
from .fsm import FlightState, Phase, phase_of
from .qp import QpProblem, QpSolution, QpStatus, solve_qp
from .uav import (NU, NX, PITCH, ROLL, VPITCH, VROLL, VX, VY, VYAW, VZ, X, Y, YAW, Z, LinearModel,
                  UavParams, discretize, linearize_hover, scale_inputs)

HORIZON = 20
STEP = 0.1


# ------------------------------------------------------------------ augmented model


@dataclass(frozen=True)
class AugmentedModel:
    A_a: np.ndarray
    B_a: np.ndarray
    C_a: np.ndarray

    @property
    def n(self) -> int:
        return self.A_a.shape[0] - self.B_a.shape[1]

    @property
    def m(self) -> int:
        return self.B_a.shape[1]


def build_augmented(model: LinearModel, C=None) -> AugmentedModel:
    if model.A is None or model.B is None:
        raise ValueError("model must be discretized first")
    A, B = model.A, model.B
    n, m = B.shape
    C = np.eye(n) if C is None else np.asarray(C, dtype=float)
    A_a = np.zeros((n + m, n + m))
    A_a[:n, :n] = A
    A_a[:n, n:] = B
    A_a[n:, n:] = np.eye(m)
    B_a = np.vstack([B, np.eye(m)])
    C_a = np.hstack([C, np.zeros((C.shape[0], m))])
    return AugmentedModel(A_a, B_a, C_a)


def prediction_matrices(aug: AugmentedModel, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked free response ``Phi`` (N*na x na) and forced response ``Gamma`` (N*na x N*m)."""
    na, m = aug.A_a.shape[0], aug.m
    Phi = np.zeros((N * na, na))
    Gamma = np.zeros((N * na, N * m))
    powers = [np.eye(na)]
    for _ in range(N):
        powers.append(aug.A_a @ powers[-1])
    AB = [P @ aug.B_a for P in powers]
    for k in range(N):
        Phi[k * na:(k + 1) * na] = powers[k + 1]
        for j in range(k + 1):
            Gamma[k * na:(k + 1) * na, j * m:(j + 1) * m] = AB[k - j]
    return Phi, Gamma


# ------------------------------------------------------------------ weights


def faa_weight(base: float, alpha: float, beta: float, v_d: float) -> float:
    """Attitude-alignment schedule ``base * (1 + alpha * exp(-beta * v_d))``."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    if v_d < 0:
        raise ValueError("vertical distance must be non-negative")
    return base * (1.0 + alpha * math.exp(-beta * v_d))


# state index, alpha, beta
DEFAULT_FAA = ((Z, 250.0, 20.0), (ROLL, 50000.0, 10.0), (PITCH, 50000.0, 10.0), (VZ, 1.0, 25.0))


@dataclass(frozen=True)
class StageWeights:
    Q_base: tuple = (30.0, 30.0, 40.0, 1.0, 1.0, 50.0, 1.0, 1.0, 3000.0, 1.0, 1.0, 1.0)
    P: tuple = (0.0,) * NX
    R: tuple = (0.1,) * NU
    faa: tuple = DEFAULT_FAA
    follow_velocity_gain: float = 10.0
    faa_enabled: bool = True

    def __post_init__(self):
        if len(self.Q_base) != NX or len(self.P) != NX or len(self.R) != NU:
            raise DimensionMismatch("weight vectors have the wrong length")
        if min(self.Q_base) < 0 or min(self.P) < 0:
            raise ValueError("state weights must be non-negative")
        if min(self.R) <= 0:
            raise ValueError("input weights must be positive")
        for idx, alpha, beta in self.faa:
            if not 0 <= idx < NX or alpha < 0 or beta <= 0:
                raise ValueError(f"bad FAA term {(idx, alpha, beta)}")

    def to_dict(self) -> dict:
        return {
            "Q_base": list(self.Q_base),
            "P": list(self.P),
            "R": list(self.R),
            "faa": [list(t) for t in self.faa],
            "follow_velocity_gain": self.follow_velocity_gain,
            "faa_enabled": self.faa_enabled,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageWeights":
        d = dict(d)
        for k in ("Q_base", "P", "R"):
            if k in d:
                d[k] = tuple(float(v) for v in d[k])
        if "faa" in d:
            d["faa"] = tuple((int(t[0]), float(t[1]), float(t[2])) for t in d["faa"])
        return cls(**d)


@dataclass
class WeightSchedule:
    """Per-stage diagonal weights: ``Q[k]`` weights predicted state k+1, the last row is P."""

    Q: np.ndarray
    R: np.ndarray


def _as_phase(phase) -> Phase:
    if isinstance(phase, Phase):
        return phase
    return phase_of(FlightState(phase))


def build_weights(phase, v_d, cfg: StageWeights = StageWeights(), N: int = HORIZON) -> WeightSchedule:
    ph = _as_phase(phase)
    v = np.broadcast_to(np.asarray(v_d, dtype=float), (N,))
    if np.any(v < 0):
        raise ValueError("vertical distance must be non-negative")
    base = np.array(cfg.Q_base, dtype=float)
    if ph is not Phase.NAVIGATION:
        base[[VX, VY]] *= cfg.follow_velocity_gain
    Q = np.tile(base, (N, 1))
    if ph is Phase.LANDING and cfg.faa_enabled:
        for idx, alpha, beta in cfg.faa:
            Q[:, idx] = base[idx] * (1.0 + alpha * np.exp(-beta * v))
    Q[N - 1] = np.array(cfg.P, dtype=float)
    return WeightSchedule(Q=Q, R=np.array(cfg.R, dtype=float))


# ------------------------------------------------------------------ references


@dataclass(frozen=True)
class ReferenceConfig:
    h_a: float = 15.0
    h_t: float = 7.0
    v_la: float = 1.0
    v_fa: float = 0.5
    flare_depth: float = 0.5
    cruise_speed: float = 6.0
    closing_speed: float = 2.0
    yaw_rate: float = 0.8
    vz_track_band: float = 1.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FullStateReference:
    values: np.ndarray
    mask: np.ndarray
    v_d: np.ndarray

    @property
    def N(self) -> int:
        return self.values.shape[0]


def _deck_rows(usv_pred) -> np.ndarray:
    if usv_pred is None:
        return np.zeros((0, NX))
    if isinstance(usv_pred, np.ndarray):
        return np.atleast_2d(usv_pred).reshape(-1, NX)
    return np.array([s.full_state12() for s in usv_pred]).reshape(-1, NX)


def _closing(x_xy, target_xy, target_v, speed, t):
    """Horizontal reference that closes the gap to a moving target at ``speed``.

    Small gaps are closed within the first step, so the result reduces to the
    target itself once the vehicle is close.
    """
    e = x_xy - target_xy
    d = np.linalg.norm(e, axis=1)
    remaining = np.maximum(d - speed * t, 0.0)
    unit = e / np.maximum(d, 1e-12)[:, None]
    ref_xy = target_xy + unit * remaining[:, None]
    ref_v = target_v - unit * (speed * (remaining > 0.0))[:, None]
    return ref_xy, ref_v


def _heading_ramp(current, target, rate, t):
    err = (np.asarray(target) - current + math.pi) % (2 * math.pi) - math.pi
    return current + np.clip(err, -rate * t, rate * t)


def build_reference(phase: FlightState, usv_pred, uav_state, cfg: ReferenceConfig = ReferenceConfig(),
                    N: int = HORIZON, dt: float = STEP) -> FullStateReference:
    """Per-stage 12-state targets; untracked entries are masked out."""
    s = FlightState(phase)
    x = np.asarray(uav_state, dtype=float)
    deck = _deck_rows(usv_pred)
    if phase_of(s) is not Phase.NAVIGATION and deck.shape[0] < N:
        raise InsufficientPrediction(f"need {N} predicted deck states, got {deck.shape[0]}")
    t = dt * np.arange(1, N + 1)
    ref = np.zeros((N, NX))
    mask = np.ones((N, NX), dtype=bool)

    if deck.shape[0] and np.hypot(*(deck[0, :2] - x[:2])) > 1.0:
        toward = math.atan2(deck[0, Y] - x[Y], deck[0, X] - x[X])
    else:
        toward = x[YAW]

    if s in (FlightState.IDLE, FlightState.GET_ALTITUDE, FlightState.APPROACH):
        if s is FlightState.APPROACH:
            goal = deck[:N] if deck.shape[0] >= N else np.tile(deck[-1], (N, 1))
            ref[:, [X, Y]], ref[:, [VX, VY]] = _closing(x[:2], goal[:, [X, Y]], goal[:, [VX, VY]],
                                                        cfg.cruise_speed, t)
        else:
            ref[:, :2] = x[:2]
        ref[:, Z] = cfg.h_a if s is not FlightState.IDLE else x[Z]
        ref[:, YAW] = _heading_ramp(x[YAW], toward, cfg.yaw_rate, t)
        mask[:, VZ] = False
        v_d = np.maximum(ref[:, Z] - (deck[:N, Z] if deck.shape[0] >= N else 0.0), 0.0)
        return FullStateReference(ref, mask, v_d)

    deck = deck[:N]
    ref[:, [X, Y]], ref[:, [VX, VY]] = _closing(x[:2], deck[:, [X, Y]], deck[:, [VX, VY]], cfg.closing_speed, t)
    ref[:, YAW] = _heading_ramp(x[YAW], deck[:, YAW], cfg.yaw_rate, t)
    ref[:, VYAW] = deck[:, VYAW]
    deck_now = deck[0, Z] - dt * deck[0, VZ]
    rel0 = x[Z] - deck_now

    if s in (FlightState.TRACKING, FlightState.TRACKING_STABLE):
        h = np.full(N, cfg.h_t)
        ref[:, Z] = deck[:, Z] + h
        ref[:, VZ] = deck[:, VZ]
        if abs(rel0 - cfg.h_t) > cfg.vz_track_band:
            mask[:, VZ] = False
    elif s is FlightState.DESCENT:
        ramp = rel0 - cfg.v_la * t
        h = np.maximum(ramp, 0.0)
        ref[:, Z] = deck[:, Z] + h
        ref[:, VZ] = deck[:, VZ] - np.where(ramp > 0.0, cfg.v_la, 0.0)
    else:  # FLARE and LANDED: match the full deck state
        ramp = rel0 - cfg.v_fa * t
        h = np.maximum(ramp, -cfg.flare_depth)
        ref[:, Z] = deck[:, Z] + h
        ref[:, VZ] = deck[:, VZ] - np.where(ramp > -cfg.flare_depth, cfg.v_fa, 0.0)
        ref[:, [ROLL, PITCH]] = deck[:, [ROLL, PITCH]]
        ref[:, [VROLL, VPITCH]] = deck[:, [VROLL, VPITCH]]
    return FullStateReference(ref, mask, np.maximum(h, 0.0))


# ------------------------------------------------------------------ condensing


@dataclass(frozen=True)
class MpcLimits:
    attitude: float = 0.7854
    horizontal_velocity: float = 8.0
    vertical_velocity: float = 4.0
    euler_rate: float = 2.0
    slew: float = 4.0
    min_altitude: float = 0.0

    def __post_init__(self):
        if min(self.attitude, self.horizontal_velocity, self.vertical_velocity, self.euler_rate, self.slew) <= 0:
            raise ValueError("limits must be positive")

    def state_bounds(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Indices and (lower, upper) for the bounded state entries."""
        idx = np.array([Z, ROLL, PITCH, VX, VY, VZ, VROLL, VPITCH, VYAW])
        hi = np.array([np.inf, self.attitude, self.attitude, self.horizontal_velocity, self.horizontal_velocity,
                       self.vertical_velocity, self.euler_rate, self.euler_rate, self.euler_rate])
        lo = -hi
        lo[0] = self.min_altitude
        return idx, lo, hi

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CondensedProblem:
    qp: QpProblem
    constant: float

    def objective(self, dU) -> float:
        """Tracking objective including the constant term."""
        return self.qp.objective(dU) + self.constant


def constraint_rows(Gamma: np.ndarray, N: int, n: int, m: int, limits: MpcLimits) -> np.ndarray:
    """Rows of the constraint matrix: bounded states, inputs, then increments (all stages)."""
    na = n + m
    idx, _, _ = limits.state_bounds()
    rows = [Gamma[k * na + idx] for k in range(N)]
    rows += [Gamma[k * na + n:(k + 1) * na] for k in range(N)]
    rows.append(np.eye(N * m))
    return np.vstack(rows)


def constraint_bounds(free: np.ndarray, N: int, n: int, m: int, limits: MpcLimits,
                      u_lo: np.ndarray, u_hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bounds matching :func:`constraint_rows`; ``free`` is the stacked free response."""
    na = n + m
    idx, lo, hi = limits.state_bounds()
    F = free.reshape(N, na)
    s_lo = (lo - F[:, idx]).ravel()
    s_hi = (hi - F[:, idx]).ravel()
    i_lo = (u_lo - F[:, n:]).ravel()
    i_hi = (u_hi - F[:, n:]).ravel()
    d = np.full(N * m, limits.slew)
    return np.concatenate([s_lo, i_lo, -d]), np.concatenate([s_hi, i_hi, d])


def condense(aug: AugmentedModel, weights: WeightSchedule, x_a0, ref: FullStateReference, limits: MpcLimits,
             u_bounds, *, cache=None) -> CondensedProblem:
    """Dense QP in the stacked increments whose value equals the tracking cost.

    ``u_bounds`` is the (lower, upper) pair for the input part of the
    augmented state.  ``cache`` may hold precomputed ``(Phi, Gamma, A)``.
    """
    N = ref.N
    n, m = aug.n, aug.m
    na = n + m
    x_a0 = np.asarray(x_a0, dtype=float)
    if x_a0.size != na or weights.Q.shape != (N, NX) or ref.values.shape[1] != NX or n != NX:
        raise DimensionMismatch("inconsistent horizon, state or weight dimensions")
    if cache is None:
        Phi, Gamma = prediction_matrices(aug, N)
        A = constraint_rows(Gamma, N, n, m, limits)
    else:
        Phi, Gamma, A = cache
    free = Phi @ x_a0
    sel = (np.arange(N)[:, None] * na + np.arange(n)[None, :]).ravel()
    Gy = Gamma[sel]
    q = (weights.Q * ref.mask).ravel()
    err = free[sel] - ref.values.ravel()
    WG = Gy * q[:, None]
    H = 2.0 * (Gy.T @ WG)
    H[np.diag_indices_from(H)] += 2.0 * np.tile(weights.R, N)
    H = 0.5 * (H + H.T)
    g = 2.0 * (WG.T @ err)
    const = float(err @ (q * err))
    lo, hi = constraint_bounds(free, N, n, m, limits, *u_bounds)
    return CondensedProblem(QpProblem(H, g, A, lo, hi), const)


def tracking_objective(states, ref: FullStateReference, weights: WeightSchedule, dU) -> float:
    """Sum of weighted squared tracking errors over stages 1..N plus weighted squared increments."""
    e = (np.asarray(states)[:, :NX] - ref.values) * ref.mask
    dU = np.asarray(dU).reshape(-1, len(weights.R))
    return float(np.sum(weights.Q * e * e) + np.sum(weights.R * dU * dU))


# ------------------------------------------------------------------ generator


@dataclass
class GeneratedTrajectory:
    t: np.ndarray                 # start time of each held command; states[k] is reached at t[k] + dt
    states: np.ndarray            # (N, 12) linear-model states
    commands: np.ndarray          # (N, 4) squared rotor speeds held over each step
    x0: np.ndarray                # state the roll-out starts from
    degraded: bool = False
    abort: bool = False
    status: str = QpStatus.OPTIMAL.value
    iterations: int = 0
    objective: float = float("nan")
    solve_time: float = 0.0
    phase: str = ""

    @property
    def _dt(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else STEP

    def _index(self, t: float) -> int:
        k = int(math.floor((t - self.t[0]) / self._dt + 1e-9))
        return min(max(k, 0), len(self.t) - 1)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :3]

    @property
    def headings(self) -> np.ndarray:
        return self.states[:, YAW]

    def command_at(self, t: float) -> np.ndarray:
        """Command scheduled for time ``t`` (zero-order hold, last one held past the horizon)."""
        k = self._index(t)
        return self.commands[min(max(k, 0), len(self.commands) - 1)]

    def shifted(self, t_now: float) -> "GeneratedTrajectory":
        dt = self._dt
        k = self._index(t_now)
        if k == 0:
            states, commands = self.states.copy(), self.commands.copy()
            x0 = self.x0.copy()
        else:
            pad = k
            states = np.vstack([self.states[k:], np.repeat(self.states[-1:], pad, axis=0)])
            commands = np.vstack([self.commands[k:], np.repeat(self.commands[-1:], pad, axis=0)])
            x0 = self.states[k - 1].copy()
        return GeneratedTrajectory(self.t + k * dt, states, commands, x0, degraded=True, phase=self.phase)


class TrajectoryGenerator:
    """Receding-horizon generator with warm starts and a shift-and-hold fallback."""

    def __init__(self, params: UavParams = UavParams(), weights: StageWeights = StageWeights(),
                 limits: MpcLimits = MpcLimits(), ref_cfg: ReferenceConfig = ReferenceConfig(),
                 N: int = HORIZON, dt: float = STEP, max_failures: int = 3, tolerance: float = 1e-8):
        self.params = params
        self.weights = weights
        self.limits = limits
        self.ref_cfg = ref_cfg
        self.N, self.dt = N, dt
        self.max_failures = max_failures
        self.tolerance = tolerance
        # inputs as per-rotor thrust so the input weights act on Newtons
        lin = scale_inputs(linearize_hover(params), params.k_T)
        self.model = discretize(lin, dt)
        self.aug = build_augmented(self.model)
        self.u_hover = self.model.u_hover.copy()
        u_max = params.k_T * params.omega_sq_max
        self.u_bounds = (-self.u_hover, np.full(NU, u_max) - self.u_hover)
        Phi, Gamma = prediction_matrices(self.aug, N)
        self._cache = (Phi, Gamma, constraint_rows(Gamma, N, NX, NU, limits))
        self.prev: GeneratedTrajectory | None = None
        self.prev_solution: QpSolution | None = None
        self.last_reference: FullStateReference | None = None
        self.failures = 0

    def to_thrust_dev(self, omega_sq) -> np.ndarray:
        return self.params.k_T * np.asarray(omega_sq, dtype=float) - self.u_hover

    def to_omega_sq(self, thrust_dev) -> np.ndarray:
        return (np.asarray(thrust_dev, dtype=float) + self.u_hover) / self.params.k_T

    def reset(self):
        self.prev = None
        self.prev_solution = None
        self.failures = 0

    def problem(self, uav_state, usv_pred, phase, u_prev=None):
        x = np.asarray(uav_state, dtype=float)
        u_dev = np.zeros(NU) if u_prev is None else self.to_thrust_dev(u_prev)
        ref = build_reference(phase, usv_pred, x, self.ref_cfg, self.N, self.dt)
        w = build_weights(phase, ref.v_d, self.weights, self.N)
        x_a0 = np.concatenate([x, u_dev])
        cp = condense(self.aug, w, x_a0, ref, self.limits, self.u_bounds, cache=self._cache)
        return cp, ref, w, x_a0

    def roll_out(self, x0, u_dev_prev, dU) -> tuple[np.ndarray, np.ndarray]:
        A, B = self.model.A, self.model.B
        dU = np.asarray(dU).reshape(self.N, NU)
        states = np.zeros((self.N, NX))
        inputs = np.zeros((self.N, NU))
        x, u = np.asarray(x0, dtype=float), np.asarray(u_dev_prev, dtype=float)
        for k in range(self.N):
            u = u + dU[k]
            x = A @ x + B @ u
            states[k], inputs[k] = x, u
        return states, inputs

    def generate(self, uav_state, usv_pred, phase, t: float = 0.0, u_prev=None) -> GeneratedTrajectory:
        t0 = time.perf_counter()
        cp, ref, w, x_a0 = self.problem(uav_state, usv_pred, phase, u_prev)
        self.last_reference = ref
        sol = solve_qp(cp.qp, tolerance=self.tolerance, warm_start=self.prev_solution)
        elapsed = time.perf_counter() - t0
        if sol.status is not QpStatus.OPTIMAL:
            self.failures += 1
            self.prev_solution = None
            if self.prev is None:
                raise NoFallback(f"QP returned {sol.status.value} with no previous trajectory")
            out = self.prev.shifted(t)
            out.status = sol.status.value
            out.iterations = sol.iterations
            out.solve_time = elapsed
            out.abort = self.failures >= self.max_failures
            return out
        self.failures = 0
        self.prev_solution = sol
        states, inputs = self.roll_out(x_a0[:NX], x_a0[NX:], sol.x)
        traj = GeneratedTrajectory(
            t=t + self.dt * np.arange(self.N),
            states=states,
            commands=self.to_omega_sq(inputs),
            x0=x_a0[:NX].copy(),
            status=sol.status.value,
            iterations=sol.iterations,
            objective=cp.objective(sol.x),
            solve_time=elapsed,
            phase=FlightState(phase).value,
        )
        self.prev = traj
        return traj
