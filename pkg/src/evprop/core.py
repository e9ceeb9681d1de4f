"""Event data model, temporal chunking, noise filtering and frame accumulation.

Events are held in numpy structured arrays with :data:`EVENT_DTYPE`; the
:class:`Event` dataclass exists for single-event construction and validation.
Timestamps are integer microseconds everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

EVENT_DTYPE = np.dtype([("t", "<i8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])


class UnsortedStreamError(ValueError):
    """Raised when an event stream is not ordered by timestamp."""

    def __init__(self, index: int, t_prev: int, t_next: int):
        self.index = index
        super().__init__(
            f"event stream not sorted: event {index} has t={t_next} us "
            f"after t={t_prev} us at event {index - 1}"
        )


class OutOfBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    polarity: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ValueError(f"negative pixel coordinate ({self.x}, {self.y})")
        if self.polarity not in (-1, 1):
            raise ValueError(f"polarity must be +1 or -1, got {self.polarity}")


def make_events(t, x, y, p) -> np.ndarray:
    """Pack parallel sequences into an event array."""
    t = np.asarray(t, dtype=np.int64)
    out = np.empty(t.shape[0], dtype=EVENT_DTYPE)
    out["t"] = t
    out["x"] = np.asarray(x)
    out["y"] = np.asarray(y)
    out["p"] = np.asarray(p)
    return out


def events_from_list(events: Iterable[Event]) -> np.ndarray:
    events = list(events)
    return make_events(
        [e.t for e in events],
        [e.x for e in events],
        [e.y for e in events],
        [e.polarity for e in events],
    )


def empty_events() -> np.ndarray:
    return np.empty(0, dtype=EVENT_DTYPE)


@dataclass
class EventChunk:
    t_start: int
    t_end: int
    events: np.ndarray

    def __len__(self) -> int:
        return len(self.events)

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start


@dataclass
class EventFrame:
    width: int
    height: int
    counts: np.ndarray  # shape (height, width)


@dataclass(frozen=True)
class StcFilterParams:
    spatial_radius: int = 1
    temporal_window: int = 1000
    min_support: int = 1

    def __post_init__(self):
        if self.spatial_radius < 1:
            raise ValueError("spatial_radius must be >= 1")
        if self.temporal_window <= 0:
            raise ValueError("temporal_window must be > 0")
        if self.min_support < 1:
            raise ValueError("min_support must be >= 1")


def check_sorted(t: np.ndarray, offset: int = 0) -> None:
    if len(t) < 2:
        return
    bad = np.flatnonzero(np.diff(t) < 0)
    if bad.size:
        i = int(bad[0]) + 1
        raise UnsortedStreamError(offset + i, int(t[i - 1]), int(t[i]))


def iter_chunks(
    stream: np.ndarray,
    dt: int,
    t_start: int | None = None,
    t_stop: int | None = None,
) -> Iterator[EventChunk]:
    """Yield consecutive chunks of length ``dt`` covering ``[t_start, t_stop)``.

    Without explicit bounds the chunks tile the stream from its first to its
    last timestamp; the final chunk may be shorter. Chunk event arrays are
    views into ``stream`` when it is contiguous.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = len(stream)
    if t_start is None or t_stop is None:
        if n == 0:
            return
        t0 = int(stream["t"][0]) if t_start is None else int(t_start)
        t1 = int(stream["t"][-1]) + 1 if t_stop is None else int(t_stop)
    else:
        t0, t1 = int(t_start), int(t_stop)
    ts = np.ascontiguousarray(stream["t"])
    pos = int(np.searchsorted(ts, t0, side="left")) if n else 0
    if n and pos > 0:
        raise ValueError(f"stream has events before t_start={t0}")
    last_t = None
    start = t0
    while start < t1:
        end = min(start + dt, t1)
        stop = int(np.searchsorted(ts, end, side="left")) if n else 0
        block = stream[pos:stop]
        if len(block):
            check_sorted(block["t"], offset=pos)
            if last_t is not None and int(block["t"][0]) < last_t:
                raise UnsortedStreamError(pos, last_t, int(block["t"][0]))
            last_t = int(block["t"][-1])
        yield EventChunk(start, end, block)
        pos = stop
        start = end
    if pos < n:
        raise ValueError(f"stream has events at or after t_stop={t1}")


def chunk_events(stream: np.ndarray, dt: int = 10_000) -> list[EventChunk]:
    """Split a time-sorted event array into chunks of ``dt`` microseconds."""
    check_sorted(stream["t"])
    return list(iter_chunks(stream, dt))


def flatten_chunks(chunks: Sequence[EventChunk]) -> np.ndarray:
    if not chunks:
        return empty_events()
    return np.concatenate([c.events for c in chunks])


def stc_support(events: np.ndarray, radius: int, window: int) -> np.ndarray:
    """Count, for each event, the other events inside its space-time box.

    The box is Chebyshev distance ``radius`` in pixels and ``|dt| <= window``.
    Exact; runs one pair of binary searches per neighbour offset over events
    sorted by (pixel, t).
    """
    n = len(events)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    t = events["t"].astype(np.int64)
    x = events["x"].astype(np.int64)
    y = events["y"].astype(np.int64)
    t_rel = t - t.min()
    span = int(t_rel.max()) + window + 1
    # pixel keys are offset by radius so neighbour keys stay non-negative
    w = int(x.max()) + 2 * radius + 1
    key = (y + radius) * w + (x + radius)
    combined = key * span + t_rel
    perm = np.argsort(combined, kind="stable")
    order = combined[perm]
    # queries issued in sorted order stay sorted per offset, which keeps the
    # binary searches cache friendly
    key_s = key[perm]
    t_s = t_rel[perm]
    counts_s = np.zeros(n, dtype=np.int64)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            q = (key_s + dy * w + dx) * span + t_s
            counts_s += np.searchsorted(order, q + window, side="right")
            counts_s -= np.searchsorted(order, q - window, side="left")
    counts = np.empty(n, dtype=np.int64)
    counts[perm] = counts_s
    return counts - 1


def stc_filter(chunk: EventChunk, params: StcFilterParams) -> EventChunk:
    """Drop events lacking ``min_support`` neighbours in the space-time box."""
    support = stc_support(chunk.events, params.spatial_radius, params.temporal_window)
    keep = support >= params.min_support
    return EventChunk(chunk.t_start, chunk.t_end, chunk.events[keep])


def accumulate_frame(chunk: EventChunk, width: int, height: int) -> EventFrame:
    ev = chunk.events
    x = ev["x"].astype(np.int64)
    y = ev["y"].astype(np.int64)
    if len(ev) and (x.max() >= width or y.max() >= height):
        i = int(np.flatnonzero((x >= width) | (y >= height))[0])
        raise OutOfBoundsError(
            f"event {i} at ({x[i]}, {y[i]}) outside {width}x{height} sensor"
        )
    counts = np.bincount(y * width + x, minlength=width * height)
    return EventFrame(width, height, counts.reshape(height, width))
