"""Accuracy of rotor-speed and state estimates against ground truth."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .estimate import AttitudeUndefined, attitude_from_bz
from .geometry import quat_to_matrix

DEFAULT_WARMUP_US = 300_000
DEFAULT_PAIR_TOLERANCE_US = 5_000


class AlignmentError(ValueError):
    pass


@dataclass
class PairedSamples:
    t: np.ndarray  # estimate timestamps, us
    est: np.ndarray  # (n, k)
    gt: np.ndarray  # (n, k)
    n_unpaired: int = 0

    def __len__(self):
        return len(self.t)

    def after(self, t_min: int) -> "PairedSamples":
        keep = self.t >= t_min
        return PairedSamples(self.t[keep], self.est[keep], self.gt[keep], self.n_unpaired)


def align_series(est_t, est_values, gt_t, gt_values,
                 tolerance_us: int = DEFAULT_PAIR_TOLERANCE_US) -> PairedSamples:
    """Pair every estimate with the nearest ground-truth sample within the tolerance."""
    est_t = np.asarray(est_t, dtype=np.int64)
    gt_t = np.asarray(gt_t, dtype=np.int64)
    if len(est_t) == 0 or len(gt_t) == 0:
        raise AlignmentError("empty series")
    est_values = np.asarray(est_values, dtype=float).reshape(len(est_t), -1)
    gt_values = np.asarray(gt_values, dtype=float).reshape(len(gt_t), -1)
    if np.any(np.diff(est_t) < 0) or np.any(np.diff(gt_t) < 0):
        raise AlignmentError("series must be time-sorted")
    j = np.searchsorted(gt_t, est_t)
    lo = np.clip(j - 1, 0, len(gt_t) - 1)
    hi = np.clip(j, 0, len(gt_t) - 1)
    pick = np.where(np.abs(gt_t[hi] - est_t) < np.abs(est_t - gt_t[lo]), hi, lo)
    ok = np.abs(gt_t[pick] - est_t) <= tolerance_us
    if not np.any(ok):
        raise AlignmentError("estimate and ground-truth series do not overlap")
    return PairedSamples(est_t[ok], est_values[ok], gt_values[pick[ok]], int((~ok).sum()))


@dataclass
class PropMetrics:
    mae: float
    rmse: float
    mape: float  # percent
    pearson: float | None  # None when undefined (constant series)
    n: int
    windowed: list[tuple[int, float]] = field(default_factory=list)  # (k, mean |err|)


def pearson(a, b) -> float | None:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2:
        return None
    da = a - a.mean()
    db = b - b.mean()
    den = math.sqrt(float(da @ da) * float(db @ db))
    if den <= 1e-12 * max(1.0, float(np.abs(a).max()) * float(np.abs(b).max())) * len(a):
        return None
    return float(da @ db) / den


def windowed_error(t, abs_err, t_start: int, width_us: int = 1_000_000) -> list[tuple[int, float]]:
    """Mean absolute error in consecutive windows ``[k, k+1)`` of ``width_us``."""
    k = (np.asarray(t, dtype=np.int64) - t_start) // width_us
    out = []
    for kk in np.unique(k):
        out.append((int(kk), float(np.mean(abs_err[k == kk]))))
    return out


def _prop_metrics(t, est, gt, t_start) -> PropMetrics:
    ok = np.isfinite(est) & np.isfinite(gt)
    t, est, gt = t[ok], est[ok], gt[ok]
    if len(est) == 0:
        return PropMetrics(math.nan, math.nan, math.nan, None, 0)
    err = est - gt
    ae = np.abs(err)
    nz = gt != 0
    mape = float(np.mean(ae[nz] / np.abs(gt[nz])) * 100.0) if np.any(nz) else math.nan
    mae = float(ae.mean())
    rmse = float(math.sqrt(float(np.mean(err * err))))
    # summation order can leave rmse a hair below mae when all errors are equal
    rmse = max(rmse, mae)
    return PropMetrics(mae, rmse, mape, pearson(est, gt), len(est),
                       windowed_error(t, ae, t_start))


@dataclass
class RpmMetrics:
    props: list[PropMetrics]
    permutation: tuple[int, ...]  # est column for each gt motor under the best relabeling
    permuted: list[PropMetrics]

    @property
    def mean_mape(self) -> float:
        return float(np.mean([p.mape for p in self.props]))

    @property
    def max_mape(self) -> float:
        return float(np.max([p.mape for p in self.props]))

    @property
    def best_mean_mape(self) -> float:
        return float(np.mean([p.mape for p in self.permuted]))


def compute_rpm_metrics(pairs: PairedSamples, warmup_us: int = DEFAULT_WARMUP_US,
                        t_start: int | None = None) -> RpmMetrics:
    """Per-propeller MAE, RMSE, MAPE and correlation after the warmup period.

    Non-finite estimates (rotor speed not yet valid) are excluded. Metrics are
    also reported under the fixed relabeling of estimate columns that
    minimises mean MAPE.
    """
    t0 = int(pairs.t[0]) if t_start is None else int(t_start)
    p = pairs.after(t0 + warmup_us)
    if len(p) == 0:
        raise AlignmentError("no paired samples after warmup")
    k = p.est.shape[1]
    props = [_prop_metrics(p.t, p.est[:, i], p.gt[:, i], t0) for i in range(k)]
    best = None
    for perm in itertools.permutations(range(k)):
        if perm == tuple(range(k)):
            cand = props
        else:
            cand = [_prop_metrics(p.t, p.est[:, perm[i]], p.gt[:, i], t0) for i in range(k)]
        score = float(np.mean([c.mape for c in cand]))
        if best is None or score < best[0] - 1e-12:
            best = (score, perm, cand)
    return RpmMetrics(props, best[1], best[2])


@dataclass
class StateMetrics:
    pos_rmse: tuple[float, float, float]
    vel_rmse: tuple[float, float, float]
    roll_rmse_deg: float
    pitch_rmse_deg: float
    n: int


def _rmse(err) -> float:
    err = np.asarray(err, dtype=float)
    err = err[np.isfinite(err)]
    return float(math.sqrt(float(np.mean(err * err)))) if len(err) else math.nan


def gt_attitude(quats) -> np.ndarray:
    """Yaw-free roll and pitch of ground-truth quaternions, shape (n, 2)."""
    out = np.full((len(quats), 2), np.nan)
    for i, q in enumerate(quats):
        try:
            a = attitude_from_bz(quat_to_matrix(q)[:, 2])
        except AttitudeUndefined:
            continue
        out[i] = (a.roll, a.pitch)
    return out


def compute_state_metrics(pairs: PairedSamples, warmup_us: int = DEFAULT_WARMUP_US,
                          t_start: int | None = None) -> StateMetrics:
    """Per-axis RMSE; ``est``/``gt`` columns are ``px py pz vx vy vz roll pitch`` (rad)."""
    t0 = int(pairs.t[0]) if t_start is None else int(t_start)
    p = pairs.after(t0 + warmup_us)
    if len(p) == 0:
        raise AlignmentError("no paired samples after warmup")
    err = p.est - p.gt
    att = err[:, 6:8]
    att = (att + np.pi) % (2 * np.pi) - np.pi
    return StateMetrics(
        tuple(_rmse(err[:, i]) for i in range(3)),
        tuple(_rmse(err[:, i]) for i in range(3, 6)),
        math.degrees(_rmse(att[:, 0])),
        math.degrees(_rmse(att[:, 1])),
        len(p),
    )


@dataclass
class MetricsReport:
    rpm: RpmMetrics
    state: StateMetrics | None = None
    n_pairs: int = 0
    n_unpaired: int = 0

    def items(self) -> list[tuple[str, object]]:
        out: list[tuple[str, object]] = [("n_pairs", self.n_pairs), ("n_unpaired", self.n_unpaired)]
        for i, m in enumerate(self.rpm.props, start=1):
            out += [(f"prop{i}.mae", m.mae), (f"prop{i}.rmse", m.rmse),
                    (f"prop{i}.mape", m.mape), (f"prop{i}.pearson", m.pearson)]
        out += [("rpm.mean_mape", self.rpm.mean_mape), ("rpm.max_mape", self.rpm.max_mape),
                ("rpm.best_permutation", "".join(str(i + 1) for i in self.rpm.permutation)),
                ("rpm.best_mean_mape", self.rpm.best_mean_mape)]
        if self.state is not None:
            s = self.state
            for ax, v in zip("xyz", s.pos_rmse):
                out.append((f"state.pos_rmse_{ax}", v))
            for ax, v in zip("xyz", s.vel_rmse):
                out.append((f"state.vel_rmse_{ax}", v))
            out += [("state.roll_rmse_deg", s.roll_rmse_deg),
                    ("state.pitch_rmse_deg", s.pitch_rmse_deg)]
        return out

    def to_text(self) -> str:
        def fmt(v):
            if v is None:
                return "undefined"
            if isinstance(v, float):
                return f"{v:.6g}"
            return str(v)

        return "".join(f"{k} = {fmt(v)}\n" for k, v in self.items())

    def to_csv(self) -> str:
        """One row per (prop, window); plot-ready."""
        lines = ["prop,window_s,mean_abs_err"]
        for i, m in enumerate(self.rpm.props, start=1):
            for k, e in m.windowed:
                lines.append(f"{i},{k},{e:.6g}")
        return "\n".join(lines) + "\n"

    def violations(self, thresholds: dict[str, float]) -> list[str]:
        """Threshold names are ``<metric>_max`` for any key of :meth:`items`."""
        values = dict(self.items())
        out = []
        for name, limit in sorted(thresholds.items()):
            key = name[:-4] if name.endswith("_max") else name
            if key == "mape":
                checks = [(f"prop{i}.mape", values[f"prop{i}.mape"])
                          for i in range(1, len(self.rpm.props) + 1)]
            elif key in values:
                checks = [(key, values[key])]
            else:
                out.append(f"{name}: unknown metric")
                continue
            for k, v in checks:
                if v is None or (isinstance(v, float) and not math.isfinite(v)) or v > limit:
                    out.append(f"{k} = {v} exceeds {name} = {limit}")
        return out
