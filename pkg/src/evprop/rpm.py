"""Per-propeller blade-passage frequency and smoothed rotor speed."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .detect import Detection


@dataclass
class RoiSignal:
    bin_width: int  # us
    counts: np.ndarray
    window_length: int  # us

    @property
    def n_bins(self) -> int:
        return self.window_length // self.bin_width

    @property
    def filled(self) -> bool:
        return len(self.counts) >= self.n_bins


@dataclass(frozen=True)
class FrequencyParams:
    f_min: float = 50.0
    f_max: float = 1000.0
    zero_pad: int = 4
    snr_min: float = 4.0
    harmonic_ratio: float = 0.5


@dataclass(frozen=True)
class RpmKfState:
    omega_hat: float = 0.0
    variance: float = 0.0
    q_process: float = 1000.0
    r_meas: float = 4.0
    gate: float = 5.0  # innovation gate in standard deviations
    initialized: bool = False
    rejected: int = 0


def roi_bounds(bbox) -> tuple[float, float, float, float]:
    """Top-left quarter of a bounding box as half-open pixel ranges."""
    x0, y0, x1, y1 = bbox
    xm = 0.5 * (x0 + x1 + 1)
    ym = 0.5 * (y0 + y1 + 1)
    return x0, y0, xm, ym


def extract_roi_events(events: np.ndarray, detection: Detection | tuple) -> np.ndarray:
    bbox = detection.bbox if isinstance(detection, Detection) else detection
    x0, y0, xm, ym = roi_bounds(bbox)
    x = events["x"]
    y = events["y"]
    keep = (x >= x0) & (x < xm) & (y >= y0) & (y < ym)
    return events[keep]


def bin_events(t: np.ndarray, t_start: int, bin_width: int, n_bins: int) -> np.ndarray:
    """Linear (cloud-in-cell) binning of timestamps.

    Bin ``i`` is centred at ``t_start + (i + 0.5) * bin_width``; each event is
    split between the two nearest bin centres. Mass falling outside the window
    is dropped.
    """
    u = (np.asarray(t, dtype=np.float64) - t_start) / bin_width - 0.5
    i = np.floor(u).astype(np.int64)
    w = u - i
    out = np.zeros(n_bins + 2)
    np.add.at(out, np.clip(i + 1, 0, n_bins + 1), 1.0 - w)
    np.add.at(out, np.clip(i + 2, 0, n_bins + 1), w)
    return out[1:-1]


def estimate_frequency(signal: RoiSignal, params: FrequencyParams = FrequencyParams()) -> float | None:
    """Blade-passage frequency in Hz, or ``None`` when no measurement is possible.

    The most recent ``window_length`` of counts is de-meaned, Hann-windowed and
    zero-padded. The lowest spectral local maximum within ``harmonic_ratio`` of
    the strongest in-band peak is taken as the fundamental and refined by a
    parabola through the log-magnitudes of it and its neighbours.
    """
    if not signal.filled:
        return None
    x = np.asarray(signal.counts[-signal.n_bins:], dtype=float)
    x = x - x.mean()
    n = len(x)
    nfft = int(2 ** math.ceil(math.log2(n * max(params.zero_pad, 1))))
    mag = np.abs(np.fft.rfft(x * np.hanning(n), nfft))
    freqs = np.fft.rfftfreq(nfft, signal.bin_width * 1e-6)
    df = freqs[1]
    lo = max(int(math.ceil(params.f_min / df)), 1)
    hi = min(int(math.floor(params.f_max / df)), len(mag) - 2)
    if hi <= lo:
        return None
    band = mag[lo: hi + 1]
    peak = float(band.max())
    if peak <= 1e-9 * max(1.0, float(np.abs(x).sum())):
        return None
    floor = float(np.median(band))
    if floor > 0 and peak / floor < params.snr_min:
        return None
    inner = band[1:-1]
    local = np.flatnonzero(
        (inner >= band[:-2]) & (inner >= band[2:]) & (inner >= params.harmonic_ratio * peak)
    )
    k = lo + 1 + int(local[0]) if local.size else lo + int(np.argmax(band))
    a, b, c = np.log(np.maximum(mag[k - 1: k + 2], 1e-300))
    denom = a - 2 * b + c
    delta = 0.5 * (a - c) / denom if denom < 0 else 0.0
    return float((k + np.clip(delta, -0.5, 0.5)) * df)


def freq_to_omega(f_blade: float, n_blades: int = 2) -> float:
    if n_blades < 1:
        raise ValueError("n_blades must be >= 1")
    return 2 * math.pi * f_blade / n_blades


def omega_to_freq(omega: float, n_blades: int = 2) -> float:
    return omega * n_blades / (2 * math.pi)


def rpm_kf_step(state: RpmKfState, measurement: float, dt: float) -> RpmKfState:
    if measurement < 0:
        raise ValueError("measurement must be non-negative")
    if not state.initialized:
        return replace(state, omega_hat=float(measurement), variance=state.r_meas,
                       initialized=True)
    p = state.variance + state.q_process * dt
    s = p + state.r_meas
    innov = measurement - state.omega_hat
    if abs(innov) > state.gate * math.sqrt(s):
        return replace(state, variance=2.0 * p, rejected=state.rejected + 1)
    k = p / s
    return replace(state, omega_hat=state.omega_hat + k * innov, variance=(1 - k) * p)
