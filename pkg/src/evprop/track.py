"""Nearest-neighbour propeller tracking and stable motor numbering."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .detect import Detection

# image quadrant (right?, top?) -> motor index; y grows downwards
_QUADRANT_INDEX = {(True, True): 1, (False, True): 2, (False, False): 3, (True, False): 4}


@dataclass(frozen=True)
class Track:
    id: int
    centroid: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    age: int = 1
    frames_missing: int = 0
    last_detection: Detection | None = None

    @property
    def position(self) -> tuple[float, float]:
        """Best current position: the centroid, or its prediction while coasting."""
        if self.frames_missing == 0:
            return self.centroid
        return predict_missing(replace(self, frames_missing=self.frames_missing - 1))


@dataclass
class PropAssignment:
    ids: dict[int, int] = field(default_factory=dict)  # track id -> motor index
    quad_center: tuple[float, float] | None = None
    ambiguous: bool = False

    def track_for(self, motor: int) -> int | None:
        for tid, idx in self.ids.items():
            if idx == motor:
                return tid
        return None


def predict_missing(track: Track) -> tuple[float, float]:
    """Constant-velocity position for the next chunk the track goes unmatched."""
    k = track.frames_missing + 1
    return (
        track.centroid[0] + track.velocity[0] * k,
        track.centroid[1] + track.velocity[1] * k,
    )


class IdSource:
    """Monotonic track-id counter; ids are never reused."""

    def __init__(self, start: int = 1):
        self._next = itertools.count(start)

    def __call__(self) -> int:
        return next(self._next)


def associate(
    tracks: list[Track],
    detections: list[Detection],
    dist_threshold: float,
    max_missing: int = 5,
    new_id: IdSource | None = None,
    velocity_smoothing: float = 0.5,
) -> list[Track]:
    """Greedy ascending-distance association of detections to tracks.

    Distances are measured from each track's constant-velocity prediction.
    Ties are broken by track id and detection position so the result does not
    depend on the order of ``detections``.
    """
    if new_id is None:
        new_id = IdSource(max((t.id for t in tracks), default=0) + 1)
    dets = sorted(detections, key=lambda d: (d.centroid[0], d.centroid[1]))
    tracks = sorted(tracks, key=lambda t: t.id)
    pairs = []
    for ti, trk in enumerate(tracks):
        px, py = predict_missing(trk)
        for di, det in enumerate(dets):
            d = float(np.hypot(det.centroid[0] - px, det.centroid[1] - py))
            if d <= dist_threshold:
                pairs.append((d, trk.id, di, ti))
    pairs.sort()
    used_t, used_d = set(), set()
    out = []
    for d, _, di, ti in pairs:
        if ti in used_t or di in used_d:
            continue
        used_t.add(ti)
        used_d.add(di)
        trk = tracks[ti]
        det = dets[di]
        k = trk.frames_missing + 1
        inst = ((det.centroid[0] - trk.centroid[0]) / k, (det.centroid[1] - trk.centroid[1]) / k)
        if trk.age == 1:
            vel = inst
        else:
            a = velocity_smoothing
            vel = (a * inst[0] + (1 - a) * trk.velocity[0], a * inst[1] + (1 - a) * trk.velocity[1])
        out.append(replace(trk, centroid=det.centroid, velocity=vel, age=trk.age + 1,
                           frames_missing=0, last_detection=det))
    for ti, trk in enumerate(tracks):
        if ti in used_t:
            continue
        missed = trk.frames_missing + 1
        if missed > max_missing:
            continue
        out.append(replace(trk, age=trk.age + 1, frames_missing=missed))
    for di, det in enumerate(dets):
        if di not in used_d:
            out.append(Track(id=new_id(), centroid=det.centroid, last_detection=det))
    out.sort(key=lambda t: t.id)
    return out


def quad_center(tracks: list[Track]) -> tuple[float, float] | None:
    """Mean of exactly four track positions; ``None`` otherwise."""
    if len(tracks) != 4:
        return None
    pts = np.array([t.position for t in tracks], dtype=float)
    c = pts.mean(axis=0)
    return float(c[0]), float(c[1])


def _quadrant_ids(tracks, center) -> dict[int, int] | None:
    ids = {}
    for t in tracks:
        x, y = t.position
        idx = _QUADRANT_INDEX[(x >= center[0], y < center[1])]
        if idx in ids.values():
            return None
        ids[t.id] = idx
    return ids


def assign_prop_ids(
    tracks: list[Track],
    center: tuple[float, float] | None,
    previous: PropAssignment | None = None,
) -> PropAssignment:
    """Map four live tracks to motor indices 1-4.

    Indices are numbered counter-clockwise from the top-right image quadrant
    around ``center``. Existing ids are kept while their tracks live; only new
    tracks are numbered, using the quadrant rule restricted to the free indices
    (nearest free quadrant when the rule collides).
    """
    prev_ids = dict(previous.ids) if previous else {}
    live = {t.id: t for t in tracks}
    kept = {tid: idx for tid, idx in prev_ids.items() if tid in live}
    if len(tracks) != 4 or center is None:
        return PropAssignment(kept, center, ambiguous=previous.ambiguous if previous else False)
    new = [t for t in tracks if t.id not in kept]
    if not new:
        return PropAssignment(kept, center, ambiguous=False)
    if not kept:
        ids = _quadrant_ids(tracks, center)
        if ids is None:
            return PropAssignment(kept, center, ambiguous=True)
        return PropAssignment(ids, center, ambiguous=False)
    free = sorted(set(range(1, 5)) - set(kept.values()))
    quadrant_pos = {1: (1.0, -1.0), 2: (-1.0, -1.0), 3: (-1.0, 1.0), 4: (1.0, 1.0)}
    best = None
    for perm in itertools.permutations(free, len(new)):
        cost = 0.0
        for trk, idx in zip(new, perm):
            x, y = trk.position
            d = np.array([x - center[0], y - center[1]])
            nd = np.linalg.norm(d)
            if nd > 0:
                cost -= float(d @ np.array(quadrant_pos[idx])) / nd
        if best is None or cost < best[0]:
            best = (cost, perm)
    ids = dict(kept)
    for trk, idx in zip(new, best[1]):
        ids[trk.id] = idx
    return PropAssignment(ids, center, ambiguous=False)
