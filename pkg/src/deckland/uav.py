"""Rigid-body multirotor model, hover linearization and ZOH discretization.

State vector layout (12 entries, world ENU frame)::

    0-2   position x, y, z            [m]
    3-5   roll, pitch, yaw            [rad]
    6-8   linear velocity vx, vy, vz  [m/s]
    9-11  Euler rates                 [rad/s]

The input is the vector of squared rotor speeds ``omega_sq`` [rad^2/s^2].
Rotor numbering follows the X-frame sign pattern of the torque map::

    roll  torque  ~ k_T l (-w1 - w2 + w3 + w4)
    pitch torque  ~ k_T l (-w1 + w2 + w3 - w4)
    yaw   torque  ~ b     (-w1 + w2 - w3 + w4)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm

from .errors import InvalidDt, InvalidParams, PitchSingularity

NX = 12
NU = 4

X, Y, Z, ROLL, PITCH, YAW, VX, VY, VZ, VROLL, VPITCH, VYAW = range(NX)

PITCH_EPS = 1e-3

# sign patterns of the per-rotor torque contributions
ROLL_SIGNS = np.array([-1.0, -1.0, 1.0, 1.0])
PITCH_SIGNS = np.array([-1.0, 1.0, 1.0, -1.0])
YAW_SIGNS = np.array([-1.0, 1.0, -1.0, 1.0])


@dataclass(frozen=True)
class UavParams:
    mass: float = 3.5
    arm_length: float = 0.325
    k_T: float = 1e-5
    b: float = 2e-7
    inertia: tuple[float, float, float] = (0.05, 0.05, 0.09)
    g: float = 9.81
    hover_fraction: float = 0.4

    def __post_init__(self):
        scalars = (self.mass, self.arm_length, self.k_T, self.b, self.g)
        if not all(np.isfinite(scalars)) or min(scalars) <= 0:
            raise InvalidParams(f"UAV parameters must be strictly positive: {self}")
        if len(self.inertia) != 3 or min(self.inertia) <= 0:
            raise InvalidParams(f"inertia diagonal must be positive: {self.inertia}")
        if not 0 < self.hover_fraction <= 1:
            raise InvalidParams("hover_fraction must be in (0, 1]")

    @property
    def omega_sq_hover(self) -> float:
        return self.mass * self.g / (4.0 * self.k_T)

    @property
    def omega_sq_max(self) -> float:
        """Rotor saturation chosen so that hover uses ``hover_fraction`` of max thrust."""
        return self.omega_sq_hover / self.hover_fraction

    @classmethod
    def from_dict(cls, d: dict) -> "UavParams":
        d = dict(d)
        if "inertia" in d:
            d["inertia"] = tuple(float(v) for v in d["inertia"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "mass": self.mass,
            "arm_length": self.arm_length,
            "k_T": self.k_T,
            "b": self.b,
            "inertia": list(self.inertia),
            "g": self.g,
            "hover_fraction": self.hover_fraction,
        }


@dataclass
class UavState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    lin_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    euler_rates: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.attitude = np.asarray(self.attitude, dtype=float)
        self.lin_velocity = np.asarray(self.lin_velocity, dtype=float)
        self.euler_rates = np.asarray(self.euler_rates, dtype=float)
        if abs(self.attitude[1]) >= math.pi / 2:
            raise PitchSingularity(f"pitch {self.attitude[1]} outside (-pi/2, pi/2)")

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.attitude, self.lin_velocity, self.euler_rates])

    @classmethod
    def from_array(cls, x) -> "UavState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:9].copy(), x[9:12].copy())


@dataclass
class LinearModel:
    """Continuous (Ac, Bc) and, once discretized, discrete (A, B) matrices.

    Inputs of the linear model are deviations from ``u_hover`` so that the
    gravity offset cancels; ``u_hover`` is stored in the same units as Bc.
    """

    Ac: np.ndarray
    Bc: np.ndarray
    u_hover: np.ndarray
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    dt: float | None = None


def rotation_zyx(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    return _rz(yaw) @ _ry(pitch) @ _rx(roll)


def rotation_xyz(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Rx(roll) @ Ry(pitch) @ Rz(yaw), the body-to-world map used for thrust."""
    return _rx(roll) @ _ry(pitch) @ _rz(yaw)


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _check_pitch(pitch: float, eps: float = PITCH_EPS):
    if not abs(pitch) < math.pi / 2 - eps:
        raise PitchSingularity(f"|pitch| = {abs(pitch):.9f} too close to pi/2")


def euler_rate_transform(attitude, eps: float = PITCH_EPS) -> np.ndarray:
    """Matrix mapping Euler rates (zyx convention) to body angular velocity.

    Columns are ``Rx^T e1``, ``Rx^T Ry^T e2`` and ``Rx^T Ry^T Rz^T e3``.
    """
    phi, theta, _ = attitude
    _check_pitch(theta, eps)
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    return np.array([
        [1.0, 0.0, -st],
        [0.0, cf, sf * ct],
        [0.0, -sf, cf * ct],
    ])


def rotor_thrust_torque(omega_sq, params: UavParams) -> tuple[float, np.ndarray]:
    """Total thrust [N] and body torque vector [N m] for squared rotor speeds."""
    w = np.asarray(omega_sq, dtype=float)
    thrust = params.k_T * float(w.sum())
    kl = params.k_T * params.arm_length
    tau = np.array([kl * ROLL_SIGNS @ w, kl * PITCH_SIGNS @ w, params.b * YAW_SIGNS @ w])
    return thrust, tau


def nonlinear_derivative(state, cmd, params: UavParams, eps: float = PITCH_EPS) -> np.ndarray:
    """Time derivative of the 12-state vector under rotor command ``cmd`` (omega^2)."""
    x = state.to_array() if isinstance(state, UavState) else np.asarray(state, dtype=float)
    return np.array(_derivative(x, np.asarray(cmd, dtype=float), params, eps))


def _derivative(x, w, params: UavParams, eps: float = PITCH_EPS):
    # scalar arithmetic: this runs ~10^5 times per episode
    phi, theta = x[3], x[4]
    if not abs(theta) < math.pi / 2 - eps:
        raise PitchSingularity(f"|pitch| = {abs(theta):.9f} too close to pi/2")
    dphi, dtheta, dpsi = x[9], x[10], x[11]
    w1, w2, w3, w4 = w[0], w[1], w[2], w[3]
    m, g, kT, b, l = params.mass, params.g, params.k_T, params.b, params.arm_length
    Ixx, Iyy, Izz = params.inertia

    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)

    # translational: third column of Rx Ry Rz times thrust/m
    a_T = kT * (w1 + w2 + w3 + w4) / m
    ax = a_T * st
    ay = -a_T * sf * ct
    az = a_T * cf * ct - g

    tau_x = kT * l * (-w1 - w2 + w3 + w4)
    tau_y = kT * l * (-w1 + w2 + w3 - w4)
    tau_z = b * (-w1 + w2 - w3 + w4)

    # body rates omega = T(eta) eta_dot
    p = dphi - st * dpsi
    q = cf * dtheta + sf * ct * dpsi
    r = -sf * dtheta + cf * ct * dpsi
    # T_dot eta_dot
    tp = -ct * dtheta * dpsi
    tq = -sf * dphi * dtheta + (cf * ct * dphi - sf * st * dtheta) * dpsi
    tr = -cf * dphi * dtheta + (-sf * ct * dphi - cf * st * dtheta) * dpsi
    # I T_dot eta_dot + omega x I omega
    hx = Ixx * tp + (Izz - Iyy) * q * r
    hy = Iyy * tq + (Ixx - Izz) * r * p
    hz = Izz * tr + (Iyy - Ixx) * p * q
    # Coriolis term C eta_dot = T^T h
    c1 = hx
    c2 = cf * hy - sf * hz
    c3 = -st * hx + sf * ct * hy + cf * ct * hz
    rhs1, rhs2, rhs3 = tau_x - c1, tau_y - c2, tau_z - c3

    # solve (T^T I T) eta_ddot = rhs via T^{-1}: eta_ddot = T^{-1} I^{-1} T^{-T} rhs
    # T^{-T} rhs: solve T^T v = rhs
    # T^T = [[1, 0, 0], [0, cf, -sf], [-st, sf ct, cf ct]]
    v1 = rhs1
    # cf v2 - sf v3 = rhs2 ; -st v1 + sf ct v2 + cf ct v3 = rhs3
    k3 = (rhs3 + st * v1) / ct
    v2 = cf * rhs2 + sf * k3
    v3 = -sf * rhs2 + cf * k3
    wx, wy, wz = v1 / Ixx, v2 / Iyy, v3 / Izz
    # eta_ddot = T^{-1} [wx, wy, wz]
    ddpsi = (sf * wy + cf * wz) / ct
    ddtheta = cf * wy - sf * wz
    ddphi = wx + st * ddpsi

    return [x[6], x[7], x[8], dphi, dtheta, dpsi, ax, ay, az, ddphi, ddtheta, ddpsi]


def rk4_step(x, w, params: UavParams, dt: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    k1 = np.array(_derivative(x, w, params))
    k2 = np.array(_derivative(x + 0.5 * dt * k1, w, params))
    k3 = np.array(_derivative(x + 0.5 * dt * k2, w, params))
    k4 = np.array(_derivative(x + dt * k3, w, params))
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def hover_rotor_speed(params: UavParams) -> float:
    """Rotor angular speed [rad/s] at which four equal rotors balance gravity."""
    if params.k_T <= 0:
        raise InvalidParams("k_T must be positive")
    return math.sqrt(params.mass * params.g / (4.0 * params.k_T))


def hover_command(params: UavParams) -> np.ndarray:
    return np.full(NU, hover_rotor_speed(params) ** 2)


def hover_state(position=(0.0, 0.0, 0.0), yaw: float = 0.0) -> np.ndarray:
    x = np.zeros(NX)
    x[0:3] = position
    x[YAW] = yaw
    return x


def linearize_hover(params: UavParams, omega_sq_hover=None) -> LinearModel:
    """Analytic Jacobians at hover, inputs as omega^2 deviations from hover."""
    wh = hover_command(params) if omega_sq_hover is None else np.asarray(omega_sq_hover, dtype=float)
    m, kT, b, l = params.mass, params.k_T, params.b, params.arm_length
    Ixx, Iyy, Izz = params.inertia
    w1, w2, w3, w4 = wh
    total = w1 + w2 + w3 + w4

    # rows: (ax, ay, az, roll_acc, pitch_acc, yaw_acc), cols: (roll, pitch, yaw)
    Ap = np.zeros((6, 3))
    Ap[0, 1] = kT * total / m
    Ap[1, 0] = -kT * total / m
    Ap[3, 1] = -b * (w1 - w2 + w3 - w4) / Izz
    Ap[4, 0] = (Iyy * b - Izz * b) * (w1 - w2 + w3 - w4) / (Iyy * Izz)
    Ap[5, 0] = (Iyy * kT * l - Izz * kT * l) * (w1 - w2 - w3 + w4) / (Iyy * Izz)
    Ap[5, 1] = -Iyy * kT * l * (w1 + w2 - w3 - w4) / (Iyy * Izz)

    Bp = np.vstack([
        np.full(4, kT / m),
        ROLL_SIGNS * kT * l / Ixx,
        PITCH_SIGNS * kT * l / Iyy,
        YAW_SIGNS * b / Izz,
    ])

    Ac = np.zeros((NX, NX))
    Ac[0:6, 6:12] = np.eye(6)
    Ac[6:12, 3:6] = Ap
    Bc = np.zeros((NX, NU))
    Bc[8:12, :] = Bp
    return LinearModel(Ac=Ac, Bc=Bc, u_hover=wh.copy())


def scale_inputs(model: LinearModel, scale: float) -> LinearModel:
    """Express the model in inputs ``u' = scale * u`` (e.g. per-rotor thrust with scale = k_T)."""
    out = replace(model, Bc=model.Bc / scale, u_hover=model.u_hover * scale)
    if model.B is not None:
        out.B = model.B / scale
    return out


def discretize(model: LinearModel, dt: float) -> LinearModel:
    """Zero-order-hold discretization via the exponential of the augmented matrix."""
    if not dt > 0:
        raise InvalidDt(f"dt must be positive, got {dt}")
    n, m = model.Bc.shape
    blk = np.zeros((n + m, n + m))
    blk[:n, :n] = model.Ac
    blk[:n, n:] = model.Bc
    E = expm(blk * dt)
    return replace(model, A=E[:n, :n].copy(), B=E[:n, n:].copy(), dt=float(dt))
