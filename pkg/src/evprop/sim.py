"""Synthetic ground truth: quadrotor flight and propeller event streams.

A target quadrotor flies a scripted open-loop manoeuvre under the rigid-body
model (``p' = v``, ``v' = R(q) [0, 0, T/m] + g``, ``q' = q * [0, w] / 2``,
``w' = -beta w``) while a downward-looking event camera on a slowly drifting
observer watches its spinning propellers. Each opaque blade edge sweeping
across a pixel emits events: positive on the leading edge, negative on the
trailing edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .core import EVENT_DTYPE, empty_events
from .estimate import QuadrotorParams
from .geometry import (
    CameraIntrinsics,
    Extrinsics,
    Pose,
    quat_from_matrix,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
)

PROFILES = ("hover", "lateral_sweep", "vertical_bob", "aggressive")

# blade-passage band the scripted profiles must respect, Hz
BLADE_FREQ_BAND = (143.0, 197.0)


@dataclass
class SimState:
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    omega_body: np.ndarray
    motor_omega: np.ndarray
    t: int = 0
    prop_phase: np.ndarray = field(default_factory=lambda: np.zeros(4))

    @classmethod
    def at_rest(cls, p=(0.0, 0.0, 0.0)) -> "SimState":
        return cls(np.asarray(p, float), np.zeros(3), np.array([1.0, 0, 0, 0]),
                   np.zeros(3), np.zeros(4))


def default_motor_positions(diagonal: float = 0.25) -> tuple:
    a = diagonal / (2 * math.sqrt(2))
    # numbered to appear top-right, top-left, bottom-left, bottom-right in the
    # default downward camera; motors 1 and 4 sit on body +y
    return ((-a, a, 0.0), (-a, -a, 0.0), (a, -a, 0.0), (a, a, 0.0))


@dataclass(frozen=True)
class GeneratorConfig:
    prop_radius: float = 0.0635
    hub_ratio: float = 0.15
    n_blades: int = 2
    blade_width: float = 0.5
    motor_positions: tuple = default_motor_positions()
    spin_directions: tuple = (1, -1, 1, -1)
    events_per_edge_crossing: float = 0.7
    noise_rate: float = 0.05
    contrast_threshold: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.prop_radius <= 0:
            raise ValueError("prop_radius must be positive")
        m = np.asarray(self.motor_positions, dtype=float)
        if m.shape != (4, 3):
            raise ValueError("need four 3-D motor positions")
        if not np.allclose(m.sum(axis=0), 0.0, atol=1e-9):
            raise ValueError("motor positions must be symmetric about the body origin")

    @property
    def diagonal(self) -> float:
        m = np.asarray(self.motor_positions, dtype=float)
        d = m[:, None, :] - m[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())


def _default_extrinsics() -> Extrinsics:
    # camera x -> body +y, camera y -> body +x, optical axis -> body -z
    return Extrinsics(np.array([[0.0, 1, 0], [1, 0, 0], [0, 0, -1]]), np.array([0.0, 0, -0.05]))


@dataclass
class SimSetup:
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    extrinsics: Extrinsics = field(default_factory=_default_extrinsics)
    quad: QuadrotorParams = field(default_factory=QuadrotorParams)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    beta: float = 2.0
    observer_altitude: float = 2.5
    observer_drift: float = 0.05
    dt_us: int = 1000


def _derivative(y: np.ndarray, thrust: float, m: float, g: np.ndarray, beta: float) -> np.ndarray:
    v = y[3:6]
    q = y[6:10]
    w = y[10:13]
    acc = quat_to_matrix(q) @ np.array([0.0, 0.0, thrust / m]) + g
    qdot = 0.5 * quat_multiply(q, np.array([0.0, w[0], w[1], w[2]]))
    return np.concatenate([v, acc, qdot, -beta * w])


def integrate_dynamics(
    state: SimState,
    thrust: float,
    omega_cmd=None,
    dt: float = 1e-3,
    quad: QuadrotorParams = QuadrotorParams(),
    beta: float = 0.0,
    motor_omega=None,
) -> SimState:
    """One RK4 step of the rigid-body model.

    ``omega_cmd`` re-excites the body rate at the start of the step; without
    it the rate decays freely. Motor speeds are held over the step and their
    integral advances the propeller phases.
    """
    if dt > 1e-3 + 1e-12:
        raise ValueError("RK4 step must not exceed 1 ms")
    w0 = state.omega_body if omega_cmd is None else np.asarray(omega_cmd, dtype=float)
    y = np.concatenate([state.p, state.v, state.q, w0])
    g = np.asarray(quad.g_vec, dtype=float)
    k1 = _derivative(y, thrust, quad.m, g, beta)
    k2 = _derivative(y + 0.5 * dt * k1, thrust, quad.m, g, beta)
    k3 = _derivative(y + 0.5 * dt * k2, thrust, quad.m, g, beta)
    k4 = _derivative(y + dt * k3, thrust, quad.m, g, beta)
    y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    motors = state.motor_omega if motor_omega is None else np.asarray(motor_omega, float)
    return SimState(
        p=y[0:3],
        v=y[3:6],
        q=quat_normalize(y[6:10]),
        omega_body=y[10:13],
        motor_omega=motors,
        t=state.t + int(round(dt * 1e6)),
        prop_phase=state.prop_phase + motors * dt,
    )


def _profile_commands(profile: str, t: float, quad: QuadrotorParams):
    """Reference roll, pitch, roll rate, pitch rate and thrust at time ``t``."""
    hover = quad.hover_thrust
    if profile == "hover":
        return 0.0, 0.0, 0.0, 0.0, hover
    if profile == "lateral_sweep":
        amp, period = math.radians(12.0), 4.0
        w = 2 * math.pi / period
        roll = amp * math.sin(w * t)
        return roll, 0.0, amp * w * math.cos(w * t), 0.0, hover / math.cos(roll)
    if profile == "vertical_bob":
        eps, period = 0.06, 5.0
        return 0.0, 0.0, 0.0, 0.0, hover * (1 + eps * math.sin(2 * math.pi * t / period))
    if profile == "aggressive":
        ra, rp = math.radians(20.0), 2.5
        pa, pp = math.radians(8.0), 3.75
        wr, wp = 2 * math.pi / rp, 2 * math.pi / pp
        roll = ra * math.sin(wr * t)
        pitch = pa * math.sin(wp * t)
        thrust = hover / (math.cos(roll) * math.cos(pitch)) * (1 + 0.04 * math.sin(2 * math.pi * t / 3.0))
        return roll, pitch, ra * wr * math.cos(wr * t), pa * wp * math.cos(wp * t), thrust
    raise ValueError(f"unknown flight profile {profile!r}; expected one of {PROFILES}")


def motor_speeds(thrust: float, roll_rate: float, quad: QuadrotorParams) -> np.ndarray:
    """Motor speeds giving total thrust ``thrust`` and the roll-rate imbalance."""
    total = thrust / quad.c_f
    half = len(quad.right_set)
    diff = roll_rate / quad.k_roll
    right = (total + diff) / (2 * half)
    left = (total - diff) / (2 * half)
    out = np.zeros(4)
    for i in quad.right_set:
        out[i - 1] = math.sqrt(max(right, 0.0))
    for i in quad.left_set:
        out[i - 1] = math.sqrt(max(left, 0.0))
    return out


def _reference_start(profile: str, duration: float, quad: QuadrotorParams):
    """Initial position and velocity centring the reference path on the origin.

    The velocity makes the reference velocity zero-mean so oscillating
    manoeuvres do not drift out of view; the position then zeroes the mean
    reference position.
    """
    n = max(int(duration * 1000), 1)
    ts = (np.arange(n) + 0.5) / 1000.0
    acc = np.zeros((n, 3))
    g = np.asarray(quad.g_vec, dtype=float)
    for i, t in enumerate(ts):
        roll, pitch, _, _, thrust = _profile_commands(profile, t, quad)
        bz = np.array([math.cos(roll) * math.sin(pitch), -math.sin(roll),
                       math.cos(roll) * math.cos(pitch)])
        acc[i] = thrust / quad.m * bz + g
    vel = np.cumsum(acc, axis=0) / 1000.0
    v0 = -vel.mean(axis=0)
    pos = np.cumsum(vel + v0, axis=0) / 1000.0
    return -pos.mean(axis=0), v0


def body_rates(roll: float, roll_rate: float, pitch_rate: float) -> np.ndarray:
    """Body angular velocity realising the rates of ``R = R_y(pitch) R_x(roll)``."""
    return np.array([roll_rate, pitch_rate * math.cos(roll), -pitch_rate * math.sin(roll)])


def scripted_flight(
    profile: str,
    duration_us: int,
    setup: SimSetup | None = None,
    seed: int = 0,
) -> list[SimState]:
    """Ground-truth target states at every simulation step, starting at t = 0."""
    setup = setup or SimSetup()
    if profile not in PROFILES:
        raise ValueError(f"unknown flight profile {profile!r}; expected one of {PROFILES}")
    quad = setup.quad
    dt = setup.dt_us * 1e-6
    n = int(duration_us // setup.dt_us)
    rng = np.random.default_rng(seed)
    p0, v0 = _reference_start(profile, max(duration_us * 1e-6, 1.0), quad)
    state = SimState.at_rest(p0)
    state.v = v0
    state.prop_phase = rng.uniform(0, 2 * math.pi, 4)
    out = []
    for k in range(n):
        # midpoint sampling keeps the integrated attitude free of a dt/2 lag
        t = (k + 0.5) * dt
        roll, _, roll_rate, pitch_rate, thrust = _profile_commands(profile, t, quad)
        motors = motor_speeds(thrust, roll_rate, quad)
        cmd = body_rates(roll, roll_rate, pitch_rate)
        state = replace(state, motor_omega=motors, omega_body=cmd)
        out.append(state)
        state = integrate_dynamics(state, quad.c_f * float(np.sum(motors**2)), cmd, dt,
                                   quad, setup.beta, motors)
    return out


def observer_pose(t_us: int, setup: SimSetup) -> Pose:
    t = t_us * 1e-6
    a = setup.observer_drift
    p = np.array([a * math.sin(2 * math.pi * t / 10.0), a * math.sin(2 * math.pi * t / 7.0),
                  setup.observer_altitude])
    return Pose(p, np.array([1.0, 0, 0, 0]))


def camera_pose(observer: Pose, extrinsics: Extrinsics) -> Pose:
    """World pose of the camera: world <- body <- camera."""
    r = observer.rotation @ extrinsics.rotation
    return Pose(observer.transform(extrinsics.translation), quat_from_matrix(r))


def render_propeller_events(
    state: SimState,
    cam: Pose,
    k: CameraIntrinsics,
    cfg: GeneratorConfig,
    interval: tuple[int, int],
    rng: np.random.Generator,
) -> np.ndarray:
    """Events from blade edges sweeping pixel centres during ``interval``.

    Geometry is frozen at ``state`` for the interval; the blade phase advances
    at each motor's speed from ``state.prop_phase``. Each edge crosses a pixel
    at most once, so the interval must be shorter than one revolution.
    """
    t0, t1 = interval
    span = (t1 - t0) * 1e-6
    if np.max(state.motor_omega) * span >= 2 * math.pi:
        raise ValueError("render interval spans a full propeller revolution")
    r_wc = cam.rotation.T  # world -> camera
    r_wb = quat_to_matrix(state.q)
    n_world = r_wb[:, 2]
    e1_w, e2_w = r_wb[:, 0], r_wb[:, 1]
    n_c = r_wc @ n_world
    e1_c = r_wc @ e1_w
    e2_c = r_wc @ e2_w
    edge_off = []
    edge_pol = []
    for b in range(cfg.n_blades):
        base = 2 * math.pi * b / cfg.n_blades
        edge_off += [base, base - cfg.blade_width]
        edge_pol += [1, -1]
    edge_off = np.array(edge_off)
    edge_pol = np.array(edge_pol, dtype=np.int8)
    two_pi = 2 * math.pi
    ang = np.linspace(0, two_pi, 24, endpoint=False)
    rim_dirs = cfg.prop_radius * (np.cos(ang)[:, None] * e1_c + np.sin(ang)[:, None] * e2_c)
    # pixel grids of every visible disc, rendered in one vectorised pass
    gxs, gys, owner = [], [], []
    c_all = np.zeros((4, 3))
    for i in range(4):
        if state.motor_omega[i] <= 0:
            continue
        c_w = state.p + r_wb @ np.asarray(cfg.motor_positions[i], dtype=float)
        c_c = r_wc @ (c_w - cam.position)
        rim = c_c + rim_dirs
        if np.any(rim[:, 2] <= 1e-3):
            continue
        u = k.fx * rim[:, 0] / rim[:, 2] + k.cx
        v = k.fy * rim[:, 1] / rim[:, 2] + k.cy
        x0 = max(int(math.floor(u.min())) - 1, 0)
        x1 = min(int(math.ceil(u.max())) + 1, k.width - 1)
        y0 = max(int(math.floor(v.min())) - 1, 0)
        y1 = min(int(math.ceil(v.max())) + 1, k.height - 1)
        if x1 < x0 or y1 < y0:
            continue
        nx, ny = x1 - x0 + 1, y1 - y0 + 1
        gxs.append(np.tile(np.arange(x0, x1 + 1), ny))
        gys.append(np.repeat(np.arange(y0, y1 + 1), nx))
        owner.append(np.full(nx * ny, i))
        c_all[i] = c_c
    if not gxs:
        return empty_events()
    gx = np.concatenate(gxs)
    gy = np.concatenate(gys)
    idx = np.concatenate(owner)
    c_pix = c_all[idx]
    rx = (gx - k.cx) / k.fx
    ry = (gy - k.cy) / k.fy
    denom = rx * n_c[0] + ry * n_c[1] + n_c[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (c_all @ n_c)[idx] / denom
    lx = rx * s - c_pix[:, 0]
    ly = ry * s - c_pix[:, 1]
    lz = s - c_pix[:, 2]
    a = lx * e1_c[0] + ly * e1_c[1] + lz * e1_c[2]
    b = lx * e2_c[0] + ly * e2_c[1] + lz * e2_c[2]
    r2 = a * a + b * b
    rad = cfg.prop_radius
    inside = (s > 0) & (r2 <= rad * rad) & (r2 >= (cfg.hub_ratio * rad) ** 2)
    gx, gy, idx = gx[inside], gy[inside], idx[inside]
    spin = np.asarray(cfg.spin_directions, dtype=float)[idx]
    beta = spin * np.arctan2(b[inside], a[inside])
    omega = np.asarray(state.motor_omega, dtype=float)[idx]
    phase0 = np.asarray(state.prop_phase, dtype=float)[idx]
    # phase still to travel before each edge reaches each pixel
    dphi = np.mod((beta - phase0)[:, None] - edge_off[None, :], two_pi)
    hit_pix, hit_edge = np.nonzero(dphi < (omega * span)[:, None])
    if hit_pix.size == 0:
        return empty_events()
    t_hit = t0 + dphi[hit_pix, hit_edge] / omega[hit_pix] * 1e6
    lam = cfg.events_per_edge_crossing
    n_ev = int(math.floor(lam)) + (rng.random(hit_pix.size) < lam - math.floor(lam))
    rep = np.repeat(np.arange(hit_pix.size), n_ev)
    ev = np.empty(rep.size, dtype=EVENT_DTYPE)
    ev["t"] = np.clip(np.floor(t_hit[rep]).astype(np.int64), t0, t1 - 1)
    ev["x"] = gx[hit_pix[rep]]
    ev["y"] = gy[hit_pix[rep]]
    ev["p"] = edge_pol[hit_edge[rep]]
    return ev[np.argsort(ev["t"], kind="stable")]


def add_background_noise(
    events: np.ndarray,
    cfg: GeneratorConfig,
    interval: tuple[int, int],
    width: int,
    height: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Superimpose uniform Poisson noise events and merge by timestamp."""
    if cfg.noise_rate < 0:
        raise ValueError("noise_rate must be >= 0")
    t0, t1 = interval
    lam = cfg.noise_rate * width * height * (t1 - t0) * 1e-6
    n = int(rng.poisson(lam)) if lam > 0 else 0
    if n == 0:
        return events
    noise = np.empty(n, dtype=EVENT_DTYPE)
    noise["t"] = rng.integers(t0, t1, n)
    noise["x"] = rng.integers(0, width, n)
    noise["y"] = rng.integers(0, height, n)
    noise["p"] = np.where(rng.random(n) < 0.5, 1, -1)
    merged = np.concatenate([events, noise])
    return merged[np.argsort(merged["t"], kind="stable")]


def iter_sequence_events(
    flight: list[SimState],
    setup: SimSetup,
    seed: int = 0,
    chunk_us: int = 10_000,
) -> Iterator[np.ndarray]:
    """Render the event stream for a flight, one time-sorted array per chunk."""
    rng = np.random.default_rng([seed, 1])
    k = setup.intrinsics
    steps_per_chunk = max(chunk_us // setup.dt_us, 1)
    for start in range(0, len(flight), steps_per_chunk):
        parts = []
        for st in flight[start: start + steps_per_chunk]:
            interval = (st.t, st.t + setup.dt_us)
            cam = camera_pose(observer_pose(st.t, setup), setup.extrinsics)
            ev = render_propeller_events(st, cam, k, setup.generator, interval, rng)
            parts.append(add_background_noise(ev, setup.generator, interval,
                                              k.width, k.height, rng))
        yield np.concatenate(parts) if parts else empty_events()


def simulate(profile: str, duration_us: int, setup: SimSetup | None = None, seed: int = 0):
    """Flight, observer poses and the full event stream held in memory."""
    setup = setup or SimSetup()
    flight = scripted_flight(profile, duration_us, setup, seed)
    parts = list(iter_sequence_events(flight, setup, seed))
    events = np.concatenate(parts) if parts else empty_events()
    obs = [observer_pose(s.t, setup) for s in flight]
    return flight, obs, events


def blade_passage_frequency(omega, n_blades: int = 2) -> np.ndarray:
    return np.asarray(omega) * n_blades / (2 * math.pi)


def hover_omega(quad: QuadrotorParams) -> float:
    return math.sqrt(quad.hover_thrust / (4 * quad.c_f))


__all__ = [
    "BLADE_FREQ_BAND", "GeneratorConfig", "PROFILES", "SimSetup", "SimState",
    "add_background_noise", "blade_passage_frequency", "camera_pose",
    "hover_omega", "integrate_dynamics", "iter_sequence_events", "motor_speeds",
    "observer_pose", "render_propeller_events", "scripted_flight", "simulate",
]
