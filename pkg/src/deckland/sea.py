"""Gerstner-wave sea surface and wave-forced 6-DOF vessel model.

Vessel pose ``eta = (x, y, z, roll, pitch, yaw)`` and rates
``nu = (vx, vy, vz, roll_rate, pitch_rate, yaw_rate)`` are both expressed in
the world frame (the vessel-parallel frame is collapsed onto ENU), so
``eta_dot = nu`` holds component-wise.

Wave forcing enters through second-order oscillators.  Every wave component
drives heave, roll and pitch with its own 2-state block ``[f, f_dot]`` whose
dynamics are ``f_ddot = -omega^2 f``; the output matrix picks ``f`` as an
acceleration on the matching degree of freedom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .errors import InvalidWave, SingularInertia

GRAVITY = 9.81
BREAKING_STEEPNESS = 1.0 / 7.0

# degrees of freedom receiving wave forcing: heave, roll, pitch
FORCED_DOFS = (2, 3, 4)


@dataclass(frozen=True)
class WaveComponent:
    steepness: float
    amplitude: float
    omega: float
    phase: float
    wave_vector: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "wave_vector", (float(self.wave_vector[0]), float(self.wave_vector[1])))
        if self.amplitude < 0:
            raise InvalidWave("amplitude must be non-negative")
        if not self.omega > 0:
            raise InvalidWave("angular frequency must be positive")
        if not self.wavenumber > 0:
            raise InvalidWave("wave vector must be non-zero")
        if not 0.0 <= self.steepness <= 1.0:
            raise InvalidWave("steepness q must be in [0, 1]")
        if self.height_to_length > BREAKING_STEEPNESS + 1e-12:
            raise InvalidWave(
                f"height/length {self.height_to_length:.3f} exceeds the 1:7 breaking limit"
            )

    @property
    def wavenumber(self) -> float:
        return math.hypot(*self.wave_vector)

    @property
    def wavelength(self) -> float:
        return 2.0 * math.pi / self.wavenumber

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    @property
    def height_to_length(self) -> float:
        return 2.0 * self.amplitude / self.wavelength

    @classmethod
    def deep_water(cls, amplitude, period, direction=0.0, phase=0.0, steepness=0.5, g=GRAVITY):
        """Component whose wavenumber follows the deep-water dispersion omega^2 = g k."""
        omega = 2.0 * math.pi / period
        k = omega**2 / g
        return cls(steepness, amplitude, omega, phase, (k * math.cos(direction), k * math.sin(direction)))

    def to_dict(self) -> dict:
        return {
            "steepness": self.steepness,
            "amplitude": self.amplitude,
            "omega": self.omega,
            "phase": self.phase,
            "wave_vector": list(self.wave_vector),
        }


def check_wave_set(waves: Sequence[WaveComponent]) -> float:
    """Combined steepness sum(H_i / L_i); raises if the superposition can break."""
    total = sum(w.height_to_length for w in waves)
    if total > BREAKING_STEEPNESS + 1e-12:
        raise InvalidWave(f"combined steepness {total:.3f} exceeds the 1:7 breaking limit")
    return total


def _wave_arrays(waves):
    A = np.array([w.amplitude for w in waves], dtype=float)
    q = np.array([w.steepness for w in waves], dtype=float)
    om = np.array([w.omega for w in waves], dtype=float)
    ph = np.array([w.phase for w in waves], dtype=float)
    kv = np.array([w.wave_vector for w in waves], dtype=float).reshape(-1, 2)
    return A, q, om, ph, kv


def wave_displacement(x0, t, waves: Sequence[WaveComponent]):
    """Gerstner displacement of the undisturbed surface point(s) ``x0``.

    ``x0`` may be a single 2-vector or an (n, 2) array.  Returns the displaced
    horizontal position(s) and the elevation(s).
    """
    x0 = np.asarray(x0, dtype=float)
    if not waves:
        return x0.copy(), np.zeros(x0.shape[:-1]) if x0.ndim > 1 else 0.0
    A, q, om, ph, kv = _wave_arrays(waves)
    arg = x0 @ kv.T - om * t + ph  # (..., n_w)
    k = np.linalg.norm(kv, axis=1)
    unit = kv / k[:, None]
    s = np.sin(arg) * (q * A)
    xy = x0 - s @ unit
    zeta = np.cos(arg) @ A
    if x0.ndim == 1:
        zeta = float(zeta)
    return xy, zeta


def surface_slope(x0, t, waves: Sequence[WaveComponent]):
    """Gradient of the elevation w.r.t. the horizontal position, evaluated at ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    if not waves:
        return np.zeros(2)
    A, _, om, ph, kv = _wave_arrays(waves)
    arg = kv @ x0 - om * t + ph
    return -(A * np.sin(arg)) @ kv


@dataclass(frozen=True)
class SurfacePoint:
    elevation: float
    elevation_rate: float
    slope: np.ndarray
    slope_rate: np.ndarray


def surface_kinematics(x0, t, waves, velocity=(0.0, 0.0)) -> SurfacePoint:
    """Elevation, slope and their total time derivatives along a point moving at ``velocity``."""
    x0 = np.asarray(x0, dtype=float)
    if not waves:
        return SurfacePoint(0.0, 0.0, np.zeros(2), np.zeros(2))
    A, _, om, ph, kv = _wave_arrays(waves)
    arg = kv @ x0 - om * t + ph
    darg = kv @ np.asarray(velocity, dtype=float) - om
    c, s = np.cos(arg), np.sin(arg)
    return SurfacePoint(
        elevation=float(A @ c),
        elevation_rate=float(-(A * s) @ darg),
        slope=-(A * s) @ kv,
        slope_rate=-(A * c * darg) @ kv,
    )


def wave_height_stats(waves, x0=(0.0, 0.0), duration=600.0, dt=0.05):
    """Overall peak-to-trough range and zero-upcrossing wave heights at a fixed probe."""
    t = np.arange(0.0, duration, dt)
    A, _, om, ph, kv = _wave_arrays(waves)
    zeta = np.cos(np.asarray(x0) @ kv.T - np.outer(t, om) + ph) @ A
    up = np.flatnonzero((zeta[:-1] < 0) & (zeta[1:] >= 0))
    heights = np.array([zeta[a:b].max() - zeta[a:b].min() for a, b in zip(up[:-1], up[1:])])
    return float(zeta.max() - zeta.min()), heights


# --------------------------------------------------------------------------- vessel


@dataclass
class UsvModelParams:
    M: np.ndarray
    D: np.ndarray
    G: np.ndarray
    C_wave: np.ndarray
    A_wave: np.ndarray
    wave_omegas: np.ndarray
    equilibrium: np.ndarray = field(default_factory=lambda: np.zeros(6))
    current: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        for name in ("M", "D", "G"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (6, 6):
                raise ValueError(f"{name} must be 6x6")
            setattr(self, name, arr)
        self.C_wave = np.asarray(self.C_wave, dtype=float).reshape(6, -1)
        n_w = self.C_wave.shape[1]
        self.A_wave = np.asarray(self.A_wave, dtype=float).reshape(n_w, n_w)
        self.wave_omegas = np.asarray(self.wave_omegas, dtype=float)
        self.equilibrium = np.asarray(self.equilibrium, dtype=float)
        self.current = np.asarray(self.current, dtype=float)
        if np.min(np.linalg.eigvalsh(0.5 * (self.D + self.D.T))) < -1e-9:
            raise ValueError("damping matrix must be positive semi-definite")
        for i in range(0, self.A_wave.shape[0], 2):
            blk = self.A_wave[i:i + 2, i:i + 2]
            if np.max(np.linalg.eigvals(blk).real) > 1e-12:
                raise ValueError("wave oscillator blocks must not be unstable")

    @property
    def n_wave(self) -> int:
        return self.A_wave.shape[0]

    @property
    def M_inv(self) -> np.ndarray:
        try:
            return np.linalg.inv(self.M)
        except np.linalg.LinAlgError as exc:
            raise SingularInertia("vessel inertia matrix is singular") from exc

    def without_horizontal_damping(self) -> "UsvModelParams":
        """Copy whose surge, sway and yaw motion coasts at constant rate (used for prediction)."""
        D = self.D.copy()
        for i in (0, 1, 5):
            D[i, :] = 0.0
            D[:, i] = 0.0
        return replace(self, D=D, current=np.zeros(2))

    @classmethod
    def catamaran(cls, waves: Sequence[WaveComponent] = (), deck_height=1.3, current=(0.0, 0.0)):
        """Diagonal defaults for a 180 kg, 5 m x 2.5 m catamaran."""
        mass, L, B, H = 180.0, 5.0, 2.5, 1.3
        Ix = mass * (B**2 + H**2) / 12.0
        Iy = mass * (L**2 + H**2) / 12.0
        Iz = mass * (L**2 + B**2) / 12.0
        M = np.diag([mass * 1.1, mass * 1.5, mass * 2.0, Ix * 1.2, Iy * 1.5, Iz * 1.2])
        G = np.diag([0.0, 0.0, 50_000.0, 2_650.0, 17_700.0, 0.0])
        damping_ratio = 0.8
        heave_roll_pitch = [2.0 * damping_ratio * math.sqrt(G[i, i] * M[i, i]) for i in (2, 3, 4)]
        D = np.diag([50.0, 200.0, *heave_roll_pitch, 400.0])
        omegas = np.array([w.omega for w in waves], dtype=float)
        n_w = 2 * len(FORCED_DOFS) * len(waves)
        A_wave = np.zeros((n_w, n_w))
        C_wave = np.zeros((6, n_w))
        for j, dof in enumerate(FORCED_DOFS):
            for i, om in enumerate(omegas):
                k = 2 * (j * len(waves) + i)
                A_wave[k:k + 2, k:k + 2] = [[0.0, 1.0], [-om**2, 0.0]]
                C_wave[dof, k] = 1.0
        eq = np.array([0.0, 0.0, deck_height, 0.0, 0.0, 0.0])
        return cls(M, D, G, C_wave, A_wave, omegas, eq, np.asarray(current, dtype=float))


@dataclass
class UsvDeckState:
    pose: np.ndarray
    rates: np.ndarray
    wave_states: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)
        self.wave_states = np.asarray(self.wave_states, dtype=float)

    @property
    def position(self):
        return self.pose[:3]

    @property
    def attitude(self):
        return self.pose[3:]

    @property
    def lin_velocity(self):
        return self.rates[:3]

    @property
    def euler_rates(self):
        return self.rates[3:]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.pose, self.rates, self.wave_states])

    def copy(self) -> "UsvDeckState":
        return UsvDeckState(self.pose.copy(), self.rates.copy(), self.wave_states.copy(), self.t)

    def full_state12(self) -> np.ndarray:
        """(position, attitude, linear velocity, Euler rates) in the UAV state layout."""
        return np.concatenate([self.pose, self.rates])

    @classmethod
    def at_rest(cls, params: UsvModelParams, xy=(0.0, 0.0), yaw=0.0, t=0.0) -> "UsvDeckState":
        pose = params.equilibrium.copy()
        pose[0:2] = xy
        pose[5] = yaw
        return cls(pose, np.zeros(6), np.zeros(params.n_wave), t)


def _usv_rhs(z, params, M_inv, actuation):
    eta, nu, xw = z[:6], z[6:12], z[12:]
    rel = nu.copy()
    rel[0:2] -= params.current
    tau = np.zeros(6)
    if actuation is not None:
        F, N = actuation
        psi = eta[5]
        tau[0] = F * math.cos(psi)
        tau[1] = F * math.sin(psi)
        tau[5] = N
    nu_dot = -M_inv @ (params.D @ rel + params.G @ (eta - params.equilibrium)) + params.C_wave @ xw + M_inv @ tau
    return np.concatenate([nu, nu_dot, params.A_wave @ xw])


def usv_step(state: UsvDeckState, params: UsvModelParams, actuation=(0.0, 0.0), dt: float = 0.02,
             M_inv=None) -> UsvDeckState:
    """One RK4 step of the wave-forced vessel model with a surge-force / yaw-moment input."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    M_inv = params.M_inv if M_inv is None else M_inv
    z = state.to_vector()
    k1 = _usv_rhs(z, params, M_inv, actuation)
    k2 = _usv_rhs(z + 0.5 * dt * k1, params, M_inv, actuation)
    k3 = _usv_rhs(z + 0.5 * dt * k2, params, M_inv, actuation)
    k4 = _usv_rhs(z + dt * k3, params, M_inv, actuation)
    z = z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return UsvDeckState(z[:6], z[6:12], z[12:], state.t + dt)


def _forcing_coefficients(params: UsvModelParams, dof: int) -> tuple[float, float]:
    m = params.M[dof, dof]
    return params.G[dof, dof] / m, params.D[dof, dof] / m


def sync_deck_to_waves(state: UsvDeckState, waves: Sequence[WaveComponent], t: float,
                       params: UsvModelParams) -> UsvDeckState:
    """Place heave, roll and pitch on the sea surface at the hull position.

    Heave follows the elevation, roll and pitch follow the local slope in the
    hull frame, and the oscillator states are set to the forcing that keeps the
    linear model on exactly this motion while the hull position is frozen.
    """
    out = state.copy()
    out.t = t
    xy = state.pose[0:2]
    psi = state.pose[5]
    c, s = math.cos(psi), math.sin(psi)
    sp = surface_kinematics(xy, t, waves, velocity=state.rates[0:2])
    fwd = np.array([c, s])
    left = np.array([-s, c])
    dfwd = np.array([-s, c]) * state.rates[5]
    dleft = np.array([-c, -s]) * state.rates[5]

    s_left = float(sp.slope @ left)
    s_fwd = float(sp.slope @ fwd)
    ds_left = float(sp.slope_rate @ left + sp.slope @ dleft)
    ds_fwd = float(sp.slope_rate @ fwd + sp.slope @ dfwd)

    out.pose[2] = params.equilibrium[2] + sp.elevation
    out.pose[3] = math.atan(s_left)
    out.pose[4] = -math.atan(s_fwd)
    out.rates[2] = sp.elevation_rate
    out.rates[3] = ds_left / (1.0 + s_left**2)
    out.rates[4] = -ds_fwd / (1.0 + s_fwd**2)

    if params.n_wave and waves:
        out.wave_states = _oscillator_states(xy, psi, t, waves, params)
    return out


def _oscillator_states(xy, psi, t, waves, params):
    """Per-component forcing f and f_dot reproducing heave/roll/pitch of a frozen hull."""
    A, _, om, ph, kv = _wave_arrays(waves)
    arg = kv @ xy - om * t + ph
    c, s = np.cos(arg), np.sin(arg)
    fwd = np.array([math.cos(psi), math.sin(psi)])
    left = np.array([-math.sin(psi), math.cos(psi)])
    # per-component motion y_i = a_i cos(arg) + b_i sin(arg)
    amp = {
        2: (A, np.zeros_like(A)),
        3: (np.zeros_like(A), -A * (kv @ left)),
        4: (np.zeros_like(A), A * (kv @ fwd)),
    }
    nw = len(waves)
    xw = np.zeros(params.n_wave)
    for j, dof in enumerate(FORCED_DOFS):
        g_m, d_m = _forcing_coefficients(params, dof)
        a, b = amp[dof]
        # y = a cos + b sin, y_dot = om (a sin - b cos), y_ddot = -om^2 y
        y = a * c + b * s
        yd = om * (a * s - b * c)
        f = (g_m - om**2) * y + d_m * yd
        fd = (g_m - om**2) * yd - d_m * om**2 * y
        for i in range(nw):
            k = 2 * (j * nw + i)
            xw[k] = f[i]
            xw[k + 1] = fd[i]
    return xw


def deck_point_height(deck: UsvDeckState, point_xy) -> float:
    """Height of the tilted deck plane below a horizontal world position."""
    from .uav import rotation_zyx

    R = rotation_zyx(*deck.pose[3:6])
    n = R[:, 2]
    d = np.asarray(point_xy, dtype=float) - deck.pose[0:2]
    return float(deck.pose[2] - (n[0] * d[0] + n[1] * d[1]) / n[2])


def deck_frame_offset(deck: UsvDeckState, point_xy) -> np.ndarray:
    """Horizontal offset of ``point_xy`` from the deck centre in hull (forward, left) axes."""
    d = np.asarray(point_xy, dtype=float) - deck.pose[0:2]
    c, s = math.cos(deck.pose[5]), math.sin(deck.pose[5])
    return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]])


# ------------------------------------------------------------------ waypoints


@dataclass
class WaypointGains:
    speed: float = 2.0
    kp_speed: float = 150.0
    ki_speed: float = 20.0
    kp_heading: float = 800.0
    kd_heading: float = 900.0
    ki_heading: float = 0.0
    cross_track_gain: float = 0.15
    capture_radius: float = 5.0
    max_force: float = 400.0
    max_moment: float = 600.0


class WaypointController:
    """PID speed and heading control that steers through a closed list of waypoints."""

    def __init__(self, waypoints, gains: WaypointGains | None = None, loop: bool = True):
        self.waypoints = [np.asarray(w, dtype=float) for w in waypoints]
        if not self.waypoints:
            raise ValueError("waypoint list must be non-empty")
        self.gains = gains or WaypointGains()
        self.loop = loop
        self.index = 0
        self.captured: list[int] = []
        self._speed_int = 0.0
        self._heading_int = 0.0

    def _segment_start(self):
        if self.index == 0 and not self.captured:
            return None
        return self.waypoints[self.index - 1]

    def correction_terms(self, state: UsvDeckState) -> tuple[float, float, float]:
        """Speed error, heading error and cross-track error for the active leg."""
        g = self.gains
        target = self.waypoints[self.index]
        pos = state.pose[0:2]
        start = self._segment_start()
        if start is None:
            start = pos
        leg = target - start
        leg_len = np.linalg.norm(leg)
        if leg_len > 1e-9:
            u = leg / leg_len
            cross = float(u[0] * (pos[1] - start[1]) - u[1] * (pos[0] - start[0]))
            path_heading = math.atan2(u[1], u[0])
        else:
            cross = 0.0
            d = target - pos
            path_heading = math.atan2(d[1], d[0])
        desired = path_heading - math.atan(g.cross_track_gain * cross)
        psi = state.pose[5]
        heading_err = wrap_angle(desired - psi)
        speed = float(state.rates[0] * math.cos(psi) + state.rates[1] * math.sin(psi))
        return g.speed - speed, heading_err, cross

    def __call__(self, state: UsvDeckState, dt: float) -> tuple[float, float]:
        g = self.gains
        if np.linalg.norm(self.waypoints[self.index] - state.pose[0:2]) < g.capture_radius:
            self.captured.append(self.index)
            self.index += 1
            if self.index >= len(self.waypoints):
                self.index = 0 if self.loop else len(self.waypoints) - 1
        speed_err, heading_err, _ = self.correction_terms(state)
        self._speed_int = float(np.clip(self._speed_int + speed_err * dt, -g.max_force / max(g.ki_speed, 1e-9),
                                        g.max_force / max(g.ki_speed, 1e-9)))
        self._heading_int += heading_err * dt
        force = g.kp_speed * speed_err + g.ki_speed * self._speed_int
        moment = g.kp_heading * heading_err - g.kd_heading * state.rates[5] + g.ki_heading * self._heading_int
        return float(np.clip(force, -g.max_force, g.max_force)), float(np.clip(moment, -g.max_moment, g.max_moment))


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def square_path(center=(0.0, 0.0), side=60.0):
    cx, cy = center
    h = side / 2.0
    return [(cx + h, cy - h), (cx + h, cy + h), (cx - h, cy + h), (cx - h, cy - h)]


# ------------------------------------------------------------------ prediction

ActuationPolicy = Callable[[UsvDeckState, float], tuple]


class LinearPropagator:
    """Exact discrete flow of the unforced (zero actuation) vessel model."""

    def __init__(self, params: UsvModelParams, dt: float):
        n = 12 + params.n_wave
        Ac = np.zeros((n + 1, n + 1))
        Minv = params.M_inv
        Ac[0:6, 6:12] = np.eye(6)
        Ac[6:12, 0:6] = -Minv @ params.G
        Ac[6:12, 6:12] = -Minv @ params.D
        Ac[6:12, 12:n] = params.C_wave
        Ac[12:n, 12:n] = params.A_wave
        # affine terms: restoring about equilibrium and current drag, via a constant state
        Ac[6:12, n] = Minv @ params.G @ params.equilibrium + Minv @ params.D @ np.r_[params.current, 0, 0, 0, 0]
        self.Phi = expm(Ac * dt)
        self.n = n
        self.dt = dt

    def roll_out(self, state: UsvDeckState, N: int) -> list[UsvDeckState]:
        z = np.append(state.to_vector(), 1.0)
        out = []
        t = state.t
        for _ in range(N):
            z = self.Phi @ z
            t += self.dt
            out.append(UsvDeckState(z[0:6], z[6:12], z[12:self.n], t))
        return out


def usv_predict(state: UsvDeckState, params: UsvModelParams, policy: ActuationPolicy | tuple | None,
                N: int, dt: float, substeps: int = 1,
                propagator: LinearPropagator | None = None) -> list[UsvDeckState]:
    """Deterministic roll-out of ``N`` steps of length ``dt``.

    ``policy`` is a callable ``(state, dt) -> (force, moment)``, a constant pair,
    or ``None`` for an unactuated vessel, which uses the exact linear flow.
    """
    if N < 1:
        raise ValueError("prediction length must be >= 1")
    if policy is None:
        prop = propagator if propagator is not None and abs(propagator.dt - dt) < 1e-12 else LinearPropagator(params, dt)
        return prop.roll_out(state, N)
    M_inv = params.M_inv
    h = dt / substeps
    out = []
    s = state
    for _ in range(N):
        for _ in range(substeps):
            act = policy(s, h) if callable(policy) else policy
            s = usv_step(s, params, act, h, M_inv=M_inv)
        out.append(s)
    return out


# ------------------------------------------------------------------ estimation


@dataclass(frozen=True)
class EstimateNoise:
    position_rmse: float = 0.116
    attitude_rmse: float = 0.017
    lin_vel_rmse: float = 0.201
    ang_vel_rmse: float = 0.004
    dropout_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        vals = (self.position_rmse, self.attitude_rmse, self.lin_vel_rmse, self.ang_vel_rmse)
        if min(vals) < 0:
            raise ValueError("RMSE values must be non-negative")
        if not 0.0 <= self.dropout_probability <= 1.0:
            raise ValueError("dropout probability must be in [0, 1]")

    @property
    def sigmas(self) -> np.ndarray:
        """Per-axis standard deviations; each 3-vector group has RMSE = sqrt(E|e|^2)."""
        group = np.array([self.position_rmse, self.attitude_rmse, self.lin_vel_rmse, self.ang_vel_rmse])
        return np.repeat(group / math.sqrt(3.0), 3)

    def to_dict(self) -> dict:
        return {
            "position_rmse": self.position_rmse,
            "attitude_rmse": self.attitude_rmse,
            "lin_vel_rmse": self.lin_vel_rmse,
            "ang_vel_rmse": self.ang_vel_rmse,
            "dropout_probability": self.dropout_probability,
            "seed": self.seed,
        }


def emulate_estimate(true_state: UsvDeckState, noise: EstimateNoise,
                     rng: np.random.Generator) -> tuple[UsvDeckState, bool]:
    """Noisy copy of ``true_state`` and a validity flag (False on a dropout)."""
    if noise.dropout_probability > 0.0 and rng.random() < noise.dropout_probability:
        return true_state.copy(), False
    err = rng.standard_normal(12) * noise.sigmas
    est = true_state.copy()
    est.pose = est.pose + err[0:6]
    est.rates = est.rates + err[6:12]
    return est, True
