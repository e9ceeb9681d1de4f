"""Coupled position and thrust-axis Kalman filters for the target quadrotor.

The position filter integrates the tilt-corrected thrust acceleration and is
corrected by camera-derived world positions. The orientation filter tracks the
unit thrust axis ``b_z``: it is rotated by the roll rate implied by the
right/left motor imbalance and corrected by disc normals from ellipse
backprojection. States are immutable dataclasses; every step returns a new one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import chi2

from .geometry import rotation_between

GRAVITY = np.array([0.0, 0.0, -9.81])
HOVER_AXIS = np.array([0.0, 0.0, 1.0])
GATE_99_3DOF = float(chi2.ppf(0.99, 3))


class AttitudeUndefined(ValueError):
    pass


@dataclass(frozen=True)
class QuadrotorParams:
    m: float = 1.0
    c_f: float = 9.018e-6
    k_roll: float = 5e-6
    g_vec: tuple[float, float, float] = (0.0, 0.0, -9.81)
    right_set: tuple[int, ...] = (1, 4)
    left_set: tuple[int, ...] = (2, 3)
    diagonal: float = 0.25

    def __post_init__(self):
        if self.m <= 0 or self.c_f <= 0:
            raise ValueError("mass and thrust coefficient must be positive")
        if set(self.right_set) & set(self.left_set):
            raise ValueError("right and left motor sets overlap")

    @property
    def hover_thrust(self) -> float:
        return self.m * float(np.linalg.norm(self.g_vec))


@dataclass(frozen=True)
class PositionState:
    x: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R_meas: np.ndarray
    gate: float = GATE_99_3DOF
    rejections: int = 0
    last_rejected: bool = False

    @classmethod
    def create(
        cls,
        p0=(0.0, 0.0, 0.0),
        v0=(0.0, 0.0, 0.0),
        sigma_p0: float = 1.0,
        sigma_v0: float = 1.0,
        q_pos: float = 1e-4,
        q_vel: float = 1.0,
        sigma_lat: float = 0.02,
        sigma_depth: float = 0.05,
        gate: float = GATE_99_3DOF,
    ) -> "PositionState":
        x = np.concatenate([np.asarray(p0, float), np.asarray(v0, float)])
        P = np.diag([sigma_p0**2] * 3 + [sigma_v0**2] * 3)
        Q = np.diag([q_pos] * 3 + [q_vel] * 3)
        R = np.diag([sigma_lat**2, sigma_lat**2, sigma_depth**2])
        return cls(x, P, Q, R, gate)

    @property
    def position(self) -> np.ndarray:
        return self.x[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[3:]


@dataclass(frozen=True)
class OrientationState:
    b_z: np.ndarray = field(default_factory=lambda: HOVER_AXIS.copy())
    P_ori: np.ndarray = field(default_factory=lambda: np.eye(3) * 0.05)
    Q_ori: np.ndarray = field(default_factory=lambda: np.eye(3) * 0.02)
    R_ori: np.ndarray = field(default_factory=lambda: np.eye(3) * 0.1**2)
    gate: float = GATE_99_3DOF
    initialized: bool = False
    rejections: int = 0
    last_rejected: bool = False

    @classmethod
    def create(cls, q_ori: float = 0.02, sigma_m: float = 0.1, sigma0: float = 0.2,
               gate: float = GATE_99_3DOF) -> "OrientationState":
        return cls(HOVER_AXIS.copy(), np.eye(3) * sigma0**2, np.eye(3) * q_ori,
                   np.eye(3) * sigma_m**2, gate)


@dataclass(frozen=True)
class Attitude:
    roll: float
    pitch: float


def total_thrust(omega, c_f: float) -> float:
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise ValueError("motor speeds must be non-negative")
    return float(c_f * np.sum(omega**2))


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def position_predict(state: PositionState, thrust: float, b_z, dt: float,
                     g=GRAVITY, m: float = 1.0) -> PositionState:
    """Propagate ``[p, v]`` under ``a = (T/m) b_z + g``.

    Pass ``b_z=None`` before any orientation estimate exists; the hover axis
    is used.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    axis = HOVER_AXIS if b_z is None else np.asarray(b_z, dtype=float)
    a = thrust / m * axis + np.asarray(g, dtype=float)
    F = np.eye(6)
    F[:3, 3:] = np.eye(3) * dt
    u = np.concatenate([0.5 * a * dt * dt, a * dt])
    x = F @ state.x + u
    P = _symmetrize(F @ state.P @ F.T + state.Q * dt)
    return replace(state, x=x, P=P)


_H_POS = np.hstack([np.eye(3), np.zeros((3, 3))])


def _joseph(P, K, H, R):
    A = np.eye(P.shape[0]) - K @ H
    return _symmetrize(A @ P @ A.T + K @ R @ K.T)


def position_update(state: PositionState, z) -> PositionState:
    """Kalman correction with a world-frame position; chi-square gated."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("measurement must be finite")
    H = _H_POS
    y = z - H @ state.x
    S = H @ state.P @ H.T + state.R_meas
    d2 = float(y @ np.linalg.solve(S, y))
    if d2 > state.gate:
        return replace(state, rejections=state.rejections + 1, last_rejected=True)
    K = np.linalg.solve(S, H @ state.P).T
    x = state.x + K @ y
    P = _joseph(state.P, K, H, state.R_meas)
    return replace(state, x=x, P=P, last_rejected=False)


def roll_rate_from_rpm(omega, k_roll: float, right_set=(1, 4), left_set=(2, 3)) -> float:
    """Body roll rate from the right/left squared motor-speed imbalance.

    ``omega`` is indexed by motor number minus one.
    """
    w2 = np.asarray(omega, dtype=float) ** 2
    right = sum(w2[i - 1] for i in right_set)
    left = sum(w2[i - 1] for i in left_set)
    return float(k_roll * (right - left))


def orientation_predict(state: OrientationState, omega_body, dt: float) -> OrientationState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    b = state.b_z
    omega_w = rotation_between(HOVER_AXIS, b) @ np.asarray(omega_body, dtype=float)
    b_new = b + np.cross(omega_w, b) * dt
    b_new = b_new / np.linalg.norm(b_new)
    P = _symmetrize(state.P_ori + state.Q_ori * dt)
    return replace(state, b_z=b_new, P_ori=P)


def orientation_update(state: OrientationState, normal_meas) -> OrientationState:
    z = np.asarray(normal_meas, dtype=float)
    z = z / np.linalg.norm(z)
    y = z - state.b_z
    S = state.P_ori + state.R_ori
    d2 = float(y @ np.linalg.solve(S, y))
    if d2 > state.gate:
        return replace(state, rejections=state.rejections + 1, last_rejected=True)
    K = np.linalg.solve(S, state.P_ori).T
    b = state.b_z + K @ y
    b = b / np.linalg.norm(b)
    P = _joseph(state.P_ori, K, np.eye(3), state.R_ori)
    return replace(state, b_z=b, P_ori=P, initialized=True, last_rejected=False)


def attitude_from_bz(b_z) -> Attitude:
    """Yaw-free roll and pitch of a thrust axis."""
    b = np.asarray(b_z, dtype=float)
    if b[2] <= 0:
        raise AttitudeUndefined(f"thrust axis {b} points away from world up")
    return Attitude(float(np.arcsin(np.clip(-b[1], -1.0, 1.0))), float(np.arctan2(b[0], b[2])))


def bz_from_attitude(roll: float, pitch: float) -> np.ndarray:
    return np.array(
        [np.cos(roll) * np.sin(pitch), -np.sin(roll), np.cos(roll) * np.cos(pitch)]
    )
