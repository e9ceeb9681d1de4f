"""Canonical on-disk formats.

Event CSV
    Header ``t_us,x,y,p``; one event per line; ``p`` is 0 (negative) or 1
    (positive).
Event binary (``.bin``)
    Headerless packed little-endian records of 13 bytes: ``t`` uint64
    microseconds, ``x`` uint16, ``y`` uint16, ``p`` uint8 in {0, 1}.
Ground truth CSV
    ``t_us,omega1..omega4,px,py,pz,vx,vy,vz,qw,qx,qy,qz`` (rad/s, m, m/s).
Observer CSV
    ``t_us,px,py,pz,qw,qx,qy,qz``: observer body pose in the world.
Estimate CSV
    See :data:`ESTIMATE_COLUMNS`.
"""

from __future__ import annotations

import csv
import io
import os
from pathlib import Path

import numpy as np

from .core import EVENT_DTYPE, empty_events
from .geometry import Pose

BINARY_EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])
assert BINARY_EVENT_DTYPE.itemsize == 13

EVENT_COLUMNS = ("t_us", "x", "y", "p")
GT_COLUMNS = (
    "t_us", "omega1", "omega2", "omega3", "omega4",
    "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz",
)
OBSERVER_COLUMNS = ("t_us", "px", "py", "pz", "qw", "qx", "qy", "qz")
ESTIMATE_COLUMNS = (
    "t_us",
    "omega1", "omega2", "omega3", "omega4",
    "rpm1", "rpm2", "rpm3", "rpm4",
    "valid1", "valid2", "valid3", "valid4",
    "px", "py", "pz", "vx", "vy", "vz",
    "bx", "by", "bz", "roll", "pitch",
    "pos_valid", "ori_valid", "pos_rejected", "ori_rejected", "n_tracks",
)


class EventFileError(ValueError):
    """Malformed event input; the message names the file and line or byte offset."""


class SchemaError(ValueError):
    pass


def _is_binary(path) -> bool:
    return Path(path).suffix.lower() in (".bin", ".raw", ".dat")


def write_events_csv(path, events: np.ndarray, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        if not append:
            fh.write("t_us,x,y,p\n")
        if len(events):
            pol = (events["p"] > 0).astype(np.int64)
            arr = np.column_stack([events["t"].astype(np.int64), events["x"], events["y"], pol])
            np.savetxt(fh, arr, fmt="%d", delimiter=",")


def write_events_binary(path, events: np.ndarray, append: bool = False) -> None:
    rec = np.empty(len(events), dtype=BINARY_EVENT_DTYPE)
    if len(events):
        if np.any(events["t"] < 0):
            raise EventFileError(f"{path}: negative timestamps cannot be stored")
        rec["t"] = events["t"]
        rec["x"] = events["x"]
        rec["y"] = events["y"]
        rec["p"] = events["p"] > 0
    with open(path, "ab" if append else "wb") as fh:
        fh.write(rec.tobytes())


def write_events(path, events: np.ndarray, append: bool = False) -> None:
    if _is_binary(path):
        write_events_binary(path, events, append)
    else:
        write_events_csv(path, events, append)


def read_events_binary(path) -> np.ndarray:
    size = os.path.getsize(path)
    if size % BINARY_EVENT_DTYPE.itemsize:
        whole = size - size % BINARY_EVENT_DTYPE.itemsize
        raise EventFileError(f"{path}: truncated record at byte offset {whole} (file size {size})")
    if size == 0:
        return empty_events()
    rec = np.memmap(path, dtype=BINARY_EVENT_DTYPE, mode="r")
    bad = np.flatnonzero(rec["p"] > 1)
    if bad.size:
        off = int(bad[0]) * BINARY_EVENT_DTYPE.itemsize
        raise EventFileError(f"{path}: polarity {rec['p'][bad[0]]} at byte offset {off}")
    if np.any(rec["t"] > np.iinfo(np.int64).max):
        raise EventFileError(f"{path}: timestamp overflow")
    ev = np.empty(len(rec), dtype=EVENT_DTYPE)
    ev["t"] = rec["t"]
    ev["x"] = rec["x"]
    ev["y"] = rec["y"]
    ev["p"] = np.where(rec["p"] == 1, 1, -1)
    return ev


def read_events_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines:
        raise EventFileError(f"{path}: empty file, expected header {','.join(EVENT_COLUMNS)}")
    header = [h.strip() for h in lines[0].split(",")]
    if tuple(header) != EVENT_COLUMNS:
        raise EventFileError(f"{path}:1: header {header} != {list(EVENT_COLUMNS)}")
    body = [ln for ln in lines[1:] if ln.strip()]
    if not body:
        return empty_events()
    try:
        arr = np.loadtxt(body, delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError:
        arr = None
    if arr is not None and (arr.size == 0 or arr.shape[1] == 4):
        arr = arr.reshape(-1, 4)
        ok = (np.isin(arr[:, 3], (0, 1)).all() and (arr[:, 1:3] >= 0).all()
              and (arr[:, 1:3] <= 65535).all())
        if ok:
            ev = np.empty(len(arr), dtype=EVENT_DTYPE)
            ev["t"], ev["x"], ev["y"] = arr[:, 0], arr[:, 1], arr[:, 2]
            ev["p"] = np.where(arr[:, 3] == 1, 1, -1)
            return ev
    # slow path pinpoints the offending line
    ev = np.empty(len(body), dtype=EVENT_DTYPE)
    n = 0
    for lineno, line in enumerate(body, start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            if len(parts) != 4:
                raise ValueError(f"expected 4 fields, got {len(parts)}")
            t, x, y, p = (int(s) for s in parts)
            if p not in (0, 1):
                raise ValueError(f"polarity {p} not in {{0, 1}}")
            if x < 0 or y < 0 or x > 65535 or y > 65535:
                raise ValueError("coordinate out of range")
        except ValueError as exc:
            raise EventFileError(f"{path}:{lineno}: {exc}: {line!r}") from None
        ev[n] = (t, x, y, 1 if p else -1)
        n += 1
    return ev[:n]


def read_events(path) -> np.ndarray:
    if not Path(path).exists():
        raise FileNotFoundError(f"event file not found: {path}")
    return read_events_binary(path) if _is_binary(path) else read_events_csv(path)


def _read_table(path, columns) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-numeric value in {row}") from None
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: {len(row)} fields, header has {len(header)}")
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    out = {name: arr[:, i] for i, name in enumerate(header)}
    out["t_us"] = out["t_us"].astype(np.int64)
    return out


def _write_table(path, columns, rows: np.ndarray, formats) -> None:
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    if len(rows):
        np.savetxt(buf, rows, fmt=formats, delimiter=",")
    Path(path).write_text(buf.getvalue())


def write_ground_truth(path, flight) -> None:
    rows = np.array(
        [[s.t, *s.motor_omega, *s.p, *s.v, *s.q] for s in flight], dtype=float
    ).reshape(-1, len(GT_COLUMNS))
    _write_table(path, GT_COLUMNS, rows, ["%d"] + ["%.9g"] * (len(GT_COLUMNS) - 1))


def read_ground_truth(path) -> dict[str, np.ndarray]:
    return _read_table(path, GT_COLUMNS)


def write_observer(path, times, poses: list[Pose]) -> None:
    rows = np.array(
        [[t, *p.position, *p.orientation] for t, p in zip(times, poses)], dtype=float
    ).reshape(-1, len(OBSERVER_COLUMNS))
    _write_table(path, OBSERVER_COLUMNS, rows, ["%d"] + ["%.9g"] * 7)


class ObserverTrajectory:
    """Observer poses with linear position and normalized-lerp orientation lookup."""

    def __init__(self, t_us: np.ndarray, positions: np.ndarray, quats: np.ndarray):
        self.t = np.asarray(t_us, dtype=np.int64)
        self.p = np.asarray(positions, dtype=float).reshape(-1, 3)
        self.q = np.asarray(quats, dtype=float).reshape(-1, 4)
        if len(self.t) == 0:
            raise SchemaError("observer trajectory is empty")
        if np.any(np.diff(self.t) <= 0):
            raise SchemaError("observer timestamps must be strictly increasing")

    @classmethod
    def read(cls, path) -> "ObserverTrajectory":
        d = _read_table(path, OBSERVER_COLUMNS)
        return cls(d["t_us"], np.column_stack([d["px"], d["py"], d["pz"]]),
                   np.column_stack([d["qw"], d["qx"], d["qy"], d["qz"]]))

    def pose_at(self, t_us: int) -> Pose:
        t = self.t
        if t_us <= t[0]:
            return Pose(self.p[0], self.q[0])
        if t_us >= t[-1]:
            return Pose(self.p[-1], self.q[-1])
        i = int(np.searchsorted(t, t_us, side="right")) - 1
        a = (t_us - t[i]) / (t[i + 1] - t[i])
        q0, q1 = self.q[i], self.q[i + 1]
        if q0 @ q1 < 0:
            q1 = -q1
        return Pose((1 - a) * self.p[i] + a * self.p[i + 1], (1 - a) * q0 + a * q1)


def write_estimates(path, records) -> None:
    """Write EstimateRecord rows; float formatting is fixed for byte-stable output."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(ESTIMATE_COLUMNS) + "\n")
        for r in records:
            fh.write(r.to_csv_row() + "\n")


def read_estimates(path) -> dict[str, np.ndarray]:
    return _read_table(path, ("t_us", "omega1", "omega2", "omega3", "omega4"))
