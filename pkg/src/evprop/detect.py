"""Propeller blob detection and ellipse fitting.

Two detectors produce the same :class:`Detection` records: connected-component
labelling on an accumulated event frame, and HDBSCAN clustering on raw event
coordinates. Ellipses come either from PCA of a point cloud or from a direct
least-squares conic fit to boundary points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.cluster import HDBSCAN

from .core import EventChunk, EventFrame

ELLIPSE_SCALE = 2.0


class DegenerateEllipseError(ValueError):
    pass


class ConicFitError(ValueError):
    pass


@dataclass
class ClusterEllipse:
    mu: np.ndarray
    sigma: np.ndarray
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, matching eigenvalues
    semi_major: float
    semi_minor: float
    n_events: int

    @property
    def angle(self) -> float:
        v = self.eigenvectors[:, 0]
        return float(np.arctan2(v[1], v[0]))


@dataclass
class Detection:
    centroid: tuple[float, float]
    bbox: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max (inclusive)
    area: int
    ellipse: ClusterEllipse | None = None


@dataclass
class Conic:
    """Homogeneous conic ``[u v 1] M [u v 1]^T = 0`` in pixel coordinates."""

    matrix: np.ndarray

    @property
    def coefficients(self) -> np.ndarray:
        """(A, B, C, D, E, F) of ``A u^2 + B uv + C v^2 + D u + E v + F``."""
        m = self.matrix
        return np.array(
            [m[0, 0], 2 * m[0, 1], m[1, 1], 2 * m[0, 2], 2 * m[1, 2], m[2, 2]]
        )

    def is_ellipse(self) -> bool:
        m = self.matrix
        return bool(
            np.linalg.det(m[:2, :2]) > 0
            and np.linalg.det(m) * (m[0, 0] + m[1, 1]) < 0
        )

    def geometric(self) -> tuple[np.ndarray, float, float, float]:
        """Center, semi-major, semi-minor and major-axis angle."""
        if not self.is_ellipse():
            raise DegenerateEllipseError("conic is not a real ellipse")
        m = self.matrix
        a2 = m[:2, :2]
        center = np.linalg.solve(a2, -m[:2, 2])
        # value of the quadratic form at the center
        k = -(center @ m[:2, 2] + m[2, 2])
        w, v = np.linalg.eigh(a2 / k)
        axes = 1.0 / np.sqrt(w)  # ascending eigenvalue -> descending axis
        angle = float(np.arctan2(v[1, 0], v[0, 0]))
        return center, float(axes[0]), float(axes[1]), angle


def normalize_conic(matrix: np.ndarray) -> Conic:
    m = 0.5 * (matrix + matrix.T)
    m = m / np.linalg.norm(m)
    if m[0, 0] + m[1, 1] < 0:
        m = -m
    return Conic(m)


def ellipse_to_conic(center, a: float, b: float, angle: float) -> Conic:
    c, s = np.cos(angle), np.sin(angle)
    r = np.array([[c, -s], [s, c]])
    a2 = r @ np.diag([1.0 / a**2, 1.0 / b**2]) @ r.T
    center = np.asarray(center, dtype=float)
    m = np.zeros((3, 3))
    m[:2, :2] = a2
    m[:2, 2] = m[2, :2] = -a2 @ center
    m[2, 2] = center @ a2 @ center - 1.0
    return normalize_conic(m)


@dataclass(frozen=True)
class DetectorParams:
    min_area: int = 30
    erosion_radius: int = 1
    binarize_threshold: int = 1
    cluster_min_size: int = 40
    cluster_min_samples: int = 8
    subsample_max: int = 20_000
    bbox_refine_margin: int = 3
    min_major_axis: float = 3.0

    def __post_init__(self):
        for name in ("min_area", "binarize_threshold", "cluster_min_size",
                     "cluster_min_samples", "subsample_max", "min_major_axis"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("erosion_radius", "bbox_refine_margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def fit_ellipse_pca(points, scale: float = ELLIPSE_SCALE) -> ClusterEllipse:
    """Mean/covariance ellipse of a 2-D point set.

    The covariance uses the unbiased 1/(n-1) normalisation and the semi-axes
    are ``scale * sqrt(lambda)``. With the default scale of 2 this is exact for
    points uniformly filling an ellipse.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n < 3:
        raise DegenerateEllipseError(f"need at least 3 points, got {n}")
    mu = pts.mean(axis=0)
    d = pts - mu
    sigma = d.T @ d / (n - 1)
    w, v = np.linalg.eigh(sigma)
    w = w[::-1].copy()
    v = v[:, ::-1].copy()
    if w[1] <= 1e-12 * max(w[0], 1.0):
        raise DegenerateEllipseError("points are collinear; covariance is rank deficient")
    w = np.clip(w, 0.0, None)
    return ClusterEllipse(
        mu=mu,
        sigma=sigma,
        eigenvalues=w,
        eigenvectors=v,
        semi_major=float(scale * np.sqrt(w[0])),
        semi_minor=float(scale * np.sqrt(w[1])),
        n_events=n,
    )


_C1_INV = np.linalg.inv(np.array([[0.0, 0.0, 2.0], [0.0, -1.0, 0.0], [2.0, 0.0, 0.0]]))


def fit_conic_direct(points) -> Conic:
    """Direct least-squares ellipse fit with the ``4AC - B^2 > 0`` constraint.

    Uses the partitioned scatter-matrix formulation of Halir and Flusser on
    centred, scaled coordinates, then maps the conic back to pixels.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 6:
        raise ConicFitError(f"need at least 6 points, got {len(pts)}")
    mean = pts.mean(axis=0)
    scale = np.sqrt(((pts - mean) ** 2).sum(axis=1).mean() / 2.0)
    if not np.isfinite(scale) or scale <= 0:
        raise ConicFitError("points are coincident")
    x = (pts[:, 0] - mean[0]) / scale
    y = (pts[:, 1] - mean[1]) / scale
    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    if np.linalg.cond(s3) > 1e12:
        raise ConicFitError("degenerate point configuration")
    t = -np.linalg.solve(s3, s2.T)
    m = _C1_INV @ (s1 + s2 @ t)
    w, v = np.linalg.eig(m)
    v = np.real(v)
    cond = 4 * v[0] * v[2] - v[1] ** 2
    ok = np.flatnonzero((cond > 0) & (np.abs(np.imag(w)) < 1e-9))
    if ok.size == 0:
        raise ConicFitError("no ellipse-constrained solution")
    # several candidates only arise with degenerate data; take the smallest residual
    best = None
    for i in ok:
        a1 = v[:, i]
        coef = np.concatenate([a1, t @ a1])
        r = np.linalg.norm(np.column_stack([d1, d2]) @ coef) / np.linalg.norm(coef)
        if best is None or r < best[0]:
            best = (r, coef)
    a, b, c, d, e, f = best[1]
    cn = np.array([[a, b / 2, d / 2], [b / 2, c, e / 2], [d / 2, e / 2, f]])
    # pixel -> normalised coordinates: n = S p with S = [[1/s,0,-mx/s],[0,1/s,-my/s],[0,0,1]]
    s_mat = np.array(
        [[1 / scale, 0, -mean[0] / scale], [0, 1 / scale, -mean[1] / scale], [0, 0, 1]]
    )
    conic = normalize_conic(s_mat.T @ cn @ s_mat)
    if not conic.is_ellipse():
        raise ConicFitError("fit did not produce a real ellipse")
    return conic


def _square(radius: int) -> np.ndarray:
    return np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)


_EIGHT = np.ones((3, 3), dtype=bool)


def detect_cc(frame: EventFrame, params: DetectorParams) -> list[Detection]:
    """Connected-component detector on a binarised event frame.

    Binarise, erode with a square element, label with 8-connectivity, then
    restore each surviving component by dilating it and intersecting with the
    un-eroded mask. Area, centroid and bbox come from the restored pixels.
    """
    mask = frame.counts >= params.binarize_threshold
    r = params.erosion_radius
    eroded = ndimage.binary_erosion(mask, _square(r)) if r > 0 else mask
    labels, n = ndimage.label(eroded, structure=_EIGHT)
    if n == 0:
        return []
    out = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        # window padded so the dilation fits
        y0 = max(sl[0].start - r, 0)
        y1 = min(sl[0].stop + r, mask.shape[0])
        x0 = max(sl[1].start - r, 0)
        x1 = min(sl[1].stop + r, mask.shape[1])
        comp = labels[y0:y1, x0:x1] == i
        foot = ndimage.binary_dilation(comp, _square(r)) if r > 0 else comp
        member = foot & mask[y0:y1, x0:x1]
        area = int(member.sum())
        if area < params.min_area:
            continue
        ys, xs = np.nonzero(member)
        xs = xs + x0
        ys = ys + y0
        try:
            ell = fit_ellipse_pca(np.column_stack([xs, ys]))
        except DegenerateEllipseError:
            ell = None
        out.append(
            Detection(
                centroid=(float(xs.mean()), float(ys.mean())),
                bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
                area=area,
                ellipse=ell,
            )
        )
    return out


def detect_cluster(
    chunk: EventChunk, params: DetectorParams, seed: int | np.random.Generator = 0
) -> list[Detection]:
    """HDBSCAN detector on event coordinates with a PCA ellipse per cluster."""
    ev = chunk.events
    pts = np.column_stack([ev["x"], ev["y"]]).astype(float)
    if len(pts) > params.subsample_max:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(pts), params.subsample_max, replace=False))
        pts = pts[idx]
    if len(pts) < params.cluster_min_size:
        return []
    labels = HDBSCAN(
        min_cluster_size=params.cluster_min_size,
        min_samples=params.cluster_min_samples,
    ).fit(pts).labels_
    out = []
    for lab in range(labels.max() + 1):
        member = pts[labels == lab]
        if len(member) < params.cluster_min_size:
            continue
        try:
            ell = fit_ellipse_pca(member)
        except DegenerateEllipseError:
            continue
        if ell.semi_major < params.min_major_axis:
            continue
        lo = member.min(axis=0)
        hi = member.max(axis=0)
        if len(pts) < len(ev):
            # a subsample's extremes jitter; grow the box and re-take extremes over every event
            m = params.bbox_refine_margin
            inside = ((ev["x"] >= lo[0] - m) & (ev["x"] <= hi[0] + m)
                      & (ev["y"] >= lo[1] - m) & (ev["y"] <= hi[1] + m))
            lo = np.array([ev["x"][inside].min(), ev["y"][inside].min()])
            hi = np.array([ev["x"][inside].max(), ev["y"][inside].max()])
        out.append(
            Detection(
                centroid=(float(ell.mu[0]), float(ell.mu[1])),
                bbox=(int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1])),
                area=len(member),
                ellipse=ell,
            )
        )
    out.sort(key=lambda d: d.centroid)
    return out


def blob_boundary_points(
    x: np.ndarray, y: np.ndarray, pad: int = 2
) -> np.ndarray:
    """Sub-pixel outline of the largest blob rasterised from point coordinates.

    Points are rounded onto a local grid, holes are filled, and one edge
    point is emitted midway between every inside pixel and each 4-neighbour
    outside it.
    """
    if len(x) == 0:
        return np.empty((0, 2))
    xi = np.rint(x).astype(np.int64)
    yi = np.rint(y).astype(np.int64)
    x0, y0 = xi.min() - pad, yi.min() - pad
    h = int(yi.max() - y0 + pad + 1)
    w = int(xi.max() - x0 + pad + 1)
    mask = np.zeros((h, w), dtype=bool)
    mask[yi - y0, xi - x0] = True
    mask = ndimage.binary_fill_holes(mask)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return np.empty((0, 2))
    if n > 1:
        sizes = np.bincount(labels.ravel())
        sizes[0] = 0
        mask = labels == int(np.argmax(sizes))
    pts = []
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        shifted = np.zeros_like(mask)
        src = mask[max(dy, 0): h + min(dy, 0), max(dx, 0): w + min(dx, 0)]
        shifted[max(-dy, 0): h + min(-dy, 0), max(-dx, 0): w + min(-dx, 0)] = src
        # shifted[r, c] = mask[r + dy, c + dx]
        edge = mask & ~shifted
        ys, xs = np.nonzero(edge)
        pts.append(np.column_stack([xs + 0.5 * dx, ys + 0.5 * dy]))
    out = np.vstack(pts).astype(float)
    out[:, 0] += x0
    out[:, 1] += y0
    return out
