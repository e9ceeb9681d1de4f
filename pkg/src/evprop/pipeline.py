"""Chunk-by-chunk estimator: events in, rotor speeds and target state out."""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .config import PipelineConfig
from .core import EventChunk, EventFrame, iter_chunks, stc_filter
from .detect import (
    ConicFitError,
    Detection,
    blob_boundary_points,
    detect_cc,
    detect_cluster,
    fit_conic_direct,
)
from .estimate import (
    AttitudeUndefined,
    OrientationState,
    PositionState,
    attitude_from_bz,
    orientation_predict,
    orientation_update,
    position_predict,
    position_update,
    roll_rate_from_rpm,
    total_thrust,
)
from .geometry import (
    DepthUnavailable,
    NotAnEllipseError,
    Pose,
    backproject,
    cam_rotation_to_world,
    cam_to_world,
    depth_from_span,
    max_pairwise_span,
    mixture_normal,
    p1e_disc_normal,
)
from .io import ObserverTrajectory
from .rpm import (
    RoiSignal,
    bin_events,
    estimate_frequency,
    freq_to_omega,
    roi_bounds,
    rpm_kf_step,
)
from .track import (
    IdSource,
    PropAssignment,
    Track,
    assign_prop_ids,
    associate,
    quad_center,
)


def _fmt(v: float) -> str:
    return "nan" if not math.isfinite(v) else f"{v:.6f}"


@dataclass
class EstimateRecord:
    t_us: int
    omega: np.ndarray
    valid: np.ndarray
    p: np.ndarray
    v: np.ndarray
    b_z: np.ndarray
    roll: float
    pitch: float
    pos_valid: bool
    ori_valid: bool
    pos_rejected: bool
    ori_rejected: bool
    n_tracks: int

    @property
    def rpm(self) -> np.ndarray:
        return self.omega * 60.0 / (2 * math.pi)

    def to_csv_row(self) -> str:
        vals = [str(self.t_us)]
        vals += [_fmt(w) for w in self.omega]
        vals += [_fmt(r) for r in self.rpm]
        vals += [str(int(b)) for b in self.valid]
        vals += [_fmt(x) for x in (*self.p, *self.v, *self.b_z, self.roll, self.pitch)]
        vals += [str(int(b)) for b in (self.pos_valid, self.ori_valid, self.pos_rejected,
                                       self.ori_rejected)]
        vals.append(str(self.n_tracks))
        return ",".join(vals)


def _detect_cc_cropped(events: np.ndarray, cfg: PipelineConfig) -> list[Detection]:
    # labelling only the occupied sub-rectangle is much cheaper than the full sensor
    if len(events) == 0:
        return []
    x = events["x"].astype(np.int64)
    y = events["y"].astype(np.int64)
    rd = cfg.pipeline.density_radius
    m = cfg.detect.erosion_radius + rd + 2
    x0 = max(int(x.min()) - m, 0)
    y0 = max(int(y.min()) - m, 0)
    w = min(int(x.max()) + m + 1, cfg.camera.width) - x0
    h = min(int(y.max()) + m + 1, cfg.camera.height) - y0
    counts = np.bincount((y - y0) * w + (x - x0), minlength=w * h).reshape(h, w)
    if rd > 0:
        # local event density closes the pinholes left by sparse edge events
        counts = ndimage.correlate(counts, np.ones((2 * rd + 1, 2 * rd + 1), np.int64),
                                   mode="constant")
    dets = detect_cc(EventFrame(w, h, counts), cfg.detect)
    return [
        Detection(
            centroid=(d.centroid[0] + x0, d.centroid[1] + y0),
            bbox=(d.bbox[0] + x0, d.bbox[1] + y0, d.bbox[2] + x0, d.bbox[3] + y0),
            area=d.area,
            ellipse=d.ellipse,
        )
        for d in dets
    ]


def _shift_bbox(bbox, dx: float, dy: float):
    ix, iy = int(round(dx)), int(round(dy))
    return bbox[0] + ix, bbox[1] + iy, bbox[2] + ix, bbox[3] + iy


@dataclass
class _PropChannel:
    """Sliding ROI timestamps and the smoothed rotor speed of one motor."""

    kf: object
    times: deque = field(default_factory=deque)
    since: int | None = None  # start of uninterrupted ROI coverage

    def clear(self) -> None:
        self.times.clear()
        self.since = None

    def push(self, t: np.ndarray, t_start: int, t_end: int, window: int) -> None:
        if self.since is None:
            self.since = t_start
        self.times.append(t)
        while self.times and (len(self.times[0]) == 0 or self.times[0][-1] < t_end - window):
            self.times.popleft()


class Estimator:
    """Stateful per-chunk estimator; feed chunks in time order."""

    def __init__(self, cfg: PipelineConfig, observer: ObserverTrajectory):
        self.cfg = cfg
        self.observer = observer
        self.extrinsics = cfg.extrinsics_matrix()
        self.tracks: list[Track] = []
        self.ids = IdSource()
        self.assignment = PropAssignment()
        self.channels = {m: _PropChannel(cfg.rpm.kf_state()) for m in range(1, 5)}
        self.t_first: int | None = None
        self.position: PositionState | None = None
        f = cfg.filter
        self.orientation = OrientationState.create(f.q_ori, f.sigma_m, f.sigma_ori0)
        self.last_thrust = cfg.quad.hover_thrust
        self.chunk_index = 0

    # ---- stages

    def _detect(self, chunk: EventChunk) -> list[Detection]:
        if self.cfg.pipeline.detector == "cc":
            return _detect_cc_cropped(chunk.events, self.cfg)
        rng = np.random.default_rng([self.cfg.pipeline.seed, self.chunk_index])
        return detect_cluster(chunk, self.cfg.detect, rng)

    def _roi_bbox(self, trk: Track):
        det = trk.last_detection
        if det is None:
            return None
        if trk.frames_missing == 0:
            return det.bbox
        px, py = trk.position
        return _shift_bbox(det.bbox, px - det.centroid[0], py - det.centroid[1])

    def _update_rpm(self, chunk: EventChunk, live: dict[int, Track]) -> tuple[np.ndarray, np.ndarray]:
        r = self.cfg.rpm
        dt = (chunk.t_end - chunk.t_start) * 1e-6
        ev = chunk.events
        omega = np.full(4, np.nan)
        valid = np.zeros(4, dtype=bool)
        for motor, ch in self.channels.items():
            tid = self.assignment.track_for(motor)
            trk = live.get(tid) if tid is not None else None
            bbox = self._roi_bbox(trk) if trk is not None else None
            if bbox is None:
                ch.clear()
            else:
                x0, y0, xm, ym = roi_bounds(bbox)
                keep = (ev["x"] >= x0) & (ev["x"] < xm) & (ev["y"] >= y0) & (ev["y"] < ym)
                ch.push(ev["t"][keep], chunk.t_start, chunk.t_end, r.window_us)
            if ch.since is not None and chunk.t_end - ch.since >= r.window_us:
                t = np.concatenate(list(ch.times))
                n_bins = r.window_us // r.bin_us
                counts = bin_events(t, chunk.t_end - r.window_us, r.bin_us, n_bins)
                f = estimate_frequency(RoiSignal(r.bin_us, counts, r.window_us),
                                       r.frequency_params())
                if f is not None:
                    ch.kf = rpm_kf_step(ch.kf, freq_to_omega(f, self.cfg.pipeline.n_blades), dt)
            if ch.kf.initialized:
                omega[motor - 1] = ch.kf.omega_hat
                valid[motor - 1] = True
        return omega, valid

    def _blob_normal(self, ev: np.ndarray, trk: Track, chunk: EventChunk, cam_rot: np.ndarray):
        cfg = self.cfg
        # undo the blob's drift over the chunk; velocity is in pixels per chunk
        s = (ev["t"].astype(float) - chunk.t_end) / (chunk.t_end - chunk.t_start)
        pts = blob_boundary_points(ev["x"] - trk.velocity[0] * s, ev["y"] - trk.velocity[1] * s)
        if len(pts) < 6:
            return None
        try:
            conic = fit_conic_direct(pts)
            cands = p1e_disc_normal(conic, cfg.camera, cfg.filter.prop_radius)
        except (ConicFitError, NotAnEllipseError, np.linalg.LinAlgError):
            return None
        return [cam_rot @ n for n, _ in cands]

    def _disc_normal(self, chunk: EventChunk, live: dict[int, Track], cam_rot: np.ndarray):
        """Mean thrust-axis measurement over every fully visible propeller disc."""
        cfg = self.cfg
        ev = chunk.events
        normals = []
        for tid in self.assignment.ids:
            trk = live.get(tid)
            if trk is None or trk.frames_missing or trk.last_detection is None:
                continue
            x0, y0, x1, y1 = trk.last_detection.bbox
            if x0 <= 0 or y0 <= 0 or x1 >= cfg.camera.width - 1 or y1 >= cfg.camera.height - 1:
                continue
            m = 3
            keep = (ev["x"] >= x0 - m) & (ev["x"] <= x1 + m) & (ev["y"] >= y0 - m) & (ev["y"] <= y1 + m)
            if keep.sum() < cfg.filter.ellipse_min_events:
                continue
            cands = self._blob_normal(ev[keep], trk, chunk, cam_rot)
            if cands:
                normals.append(cands)
        if not normals:
            return None
        o = self.orientation
        cov = o.P_ori + np.eye(3) * cfg.filter.branch_sigma**2
        n = np.mean([mixture_normal(c, o.b_z, cov) for c in normals], axis=0)
        n /= np.linalg.norm(n)
        return n if n[2] > 0 else None

    def _position_measurement(self, live: dict[int, Track], pose: Pose):
        tracks = [t for t in live.values() if t.id in self.assignment.ids]
        if len(tracks) != 4:
            return None
        center = quad_center(tracks)
        span = max_pairwise_span([t.position for t in tracks])
        try:
            z = depth_from_span(span, self.cfg.quad.diagonal, self.cfg.camera.f,
                                self.cfg.filter.depth_eps)
        except DepthUnavailable:
            return None
        return cam_to_world(backproject(center, z, self.cfg.camera), self.extrinsics, pose)

    # ---- driver

    def step(self, chunk: EventChunk) -> EstimateRecord:
        cfg = self.cfg
        if self.t_first is None:
            self.t_first = chunk.t_start
        dt = (chunk.t_end - chunk.t_start) * 1e-6
        filtered = stc_filter(chunk, cfg.stc)
        dets = self._detect(filtered)
        self.tracks = associate(self.tracks, dets, cfg.track.dist_threshold,
                                cfg.track.max_missing, self.ids, cfg.track.velocity_smoothing)
        confirmed = [t for t in self.tracks if t.age >= 2]
        if len(confirmed) == 4:
            self.assignment = assign_prop_ids(confirmed, quad_center(confirmed), self.assignment)
        else:
            self.assignment = assign_prop_ids(confirmed, None, self.assignment)
        live = {t.id: t for t in self.tracks}

        omega, valid = self._update_rpm(filtered, live)
        if valid.all():
            self.last_thrust = total_thrust(omega, cfg.quad.c_f)
            roll_rate = roll_rate_from_rpm(omega, cfg.quad.k_roll, cfg.quad.right_set,
                                           cfg.quad.left_set)
        else:
            roll_rate = 0.0

        pose = self.observer.pose_at(chunk.t_end)
        self.orientation = orientation_predict(self.orientation, (roll_rate, 0.0, 0.0), dt)
        ori_rejected = False
        normal = self._disc_normal(filtered, live, cam_rotation_to_world(self.extrinsics, pose))
        if normal is not None:
            self.orientation = orientation_update(self.orientation, normal)
            ori_rejected = self.orientation.last_rejected

        b_z = self.orientation.b_z if self.orientation.initialized else None
        pos_rejected = False
        if self.position is not None:
            self.position = position_predict(self.position, self.last_thrust, b_z, dt,
                                             np.asarray(cfg.quad.g_vec), cfg.quad.m)
        z = self._position_measurement(live, pose)
        if z is not None:
            if self.position is None:
                f = cfg.filter
                self.position = PositionState.create(
                    z, sigma_p0=f.sigma_lat, sigma_v0=f.sigma_v0, q_pos=f.q_pos, q_vel=f.q_vel,
                    sigma_lat=f.sigma_lat, sigma_depth=f.sigma_depth)
            else:
                self.position = position_update(self.position, z)
                pos_rejected = self.position.last_rejected

        try:
            att = attitude_from_bz(self.orientation.b_z)
            roll, pitch = att.roll, att.pitch
        except AttitudeUndefined:
            roll = pitch = math.nan
        nan3 = np.full(3, np.nan)
        self.chunk_index += 1
        return EstimateRecord(
            t_us=chunk.t_end,
            omega=omega,
            valid=valid,
            p=self.position.position.copy() if self.position else nan3,
            v=self.position.velocity.copy() if self.position else nan3,
            b_z=self.orientation.b_z.copy(),
            roll=roll,
            pitch=pitch,
            pos_valid=self.position is not None,
            ori_valid=self.orientation.initialized,
            pos_rejected=pos_rejected,
            ori_rejected=ori_rejected,
            n_tracks=len(confirmed),
        )


@dataclass
class RunStats:
    n_chunks: int
    n_events: int
    wall_s: float
    chunk_ms: np.ndarray
    stream_s: float

    @property
    def realtime_factor(self) -> float:
        return self.stream_s / self.wall_s if self.wall_s > 0 else math.inf

    def summary(self) -> dict[str, float]:
        c = self.chunk_ms if len(self.chunk_ms) else np.zeros(1)
        return {
            "chunks": self.n_chunks,
            "events": self.n_events,
            "wall_s": round(self.wall_s, 3),
            "chunk_ms_mean": round(float(c.mean()), 3),
            "chunk_ms_p95": round(float(np.percentile(c, 95)), 3),
            "chunk_ms_max": round(float(c.max()), 3),
            "realtime_factor": round(self.realtime_factor, 3),
        }


def run_estimation(events: np.ndarray, observer: ObserverTrajectory,
                   cfg: PipelineConfig) -> tuple[list[EstimateRecord], RunStats]:
    """Estimate over the whole stream, tiling chunks across the observer time span."""
    dt = cfg.pipeline.chunk_us
    step = int(observer.t[1] - observer.t[0]) if len(observer.t) > 1 else 1
    t0 = int(observer.t[0])
    t1 = int(observer.t[-1]) + step
    if len(events):
        t0 = min(t0, int(events["t"][0]))
        t1 = max(t1, int(events["t"][-1]) + 1)
    est = Estimator(cfg, observer)
    records = []
    times = []
    start = time.perf_counter()
    for chunk in iter_chunks(events, dt, t0, t1):
        c0 = time.perf_counter()
        records.append(est.step(chunk))
        times.append((time.perf_counter() - c0) * 1e3)
    wall = time.perf_counter() - start
    return records, RunStats(len(records), len(events), wall, np.array(times), (t1 - t0) * 1e-6)
