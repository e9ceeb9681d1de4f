"""Pinhole camera model, rigid transforms and circle pose from an ellipse."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detect import Conic


class DepthUnavailable(ValueError):
    pass


class NotAnEllipseError(ValueError):
    pass


# quaternions are (w, x, y, z), Hamilton convention, active rotation body -> world


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def quat_from_matrix(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(1.0 + r[i, i] - r[j, j] - r[k, k])
        q = np.zeros(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    q = quat_normalize(q)
    return q if q[0] >= 0 else -q


def rotation_between(a, b) -> np.ndarray:
    """Minimal-angle rotation matrix taking unit vector ``a`` onto ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    v = np.cross(a, b)
    c = float(a @ b)
    s = np.linalg.norm(v)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # 180 degrees: any axis perpendicular to a
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        return quat_to_matrix(quat_from_axis_angle(perp, np.pi))
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx * ((1 - c) / s**2)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 319.5
    cy: float = 239.5
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @property
    def f(self) -> float:
        return 0.5 * (self.fx + self.fy)


@dataclass
class Pose:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        q = np.asarray(self.orientation, dtype=float)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            q = quat_normalize(q)
        self.orientation = q

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def transform(self, p) -> np.ndarray:
        return self.rotation @ np.asarray(p, dtype=float) + self.position

    def inverse_transform(self, p) -> np.ndarray:
        return self.rotation.T @ (np.asarray(p, dtype=float) - self.position)


@dataclass
class Extrinsics:
    """Camera pose in the observer body frame (maps camera -> body)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
            raise ValueError("extrinsic rotation must be orthonormal with det +1")

    @classmethod
    def from_quaternion(cls, q, translation=(0.0, 0.0, 0.0)) -> "Extrinsics":
        return cls(quat_to_matrix(q), np.asarray(translation, dtype=float))


def depth_from_span(pixel_span: float, d: float, f: float, eps: float = 2.0) -> float:
    if pixel_span <= eps:
        raise DepthUnavailable(f"pixel span {pixel_span:.3g} px below {eps} px")
    if d <= 0 or f <= 0:
        raise ValueError("diagonal length and focal length must be positive")
    return f * d / pixel_span


def max_pairwise_span(points) -> float:
    p = np.asarray(points, dtype=float)
    diff = p[:, None, :] - p[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())


def backproject(pixel, z: float, k: CameraIntrinsics) -> np.ndarray:
    u, v = pixel
    return z * np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])


def project(p_c, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points, shape (..., 3) -> (..., 2)."""
    p = np.asarray(p_c, dtype=float)
    u = k.fx * p[..., 0] / p[..., 2] + k.cx
    v = k.fy * p[..., 1] / p[..., 2] + k.cy
    return np.stack([u, v], axis=-1)


def cam_to_world(p_c, extrinsics: Extrinsics, observer_pose: Pose) -> np.ndarray:
    p_b = extrinsics.rotation @ np.asarray(p_c, dtype=float) + extrinsics.translation
    return observer_pose.transform(p_b)


def world_to_cam(p_w, extrinsics: Extrinsics, observer_pose: Pose) -> np.ndarray:
    p_b = observer_pose.inverse_transform(p_w)
    return extrinsics.rotation.T @ (p_b - extrinsics.translation)


def cam_rotation_to_world(extrinsics: Extrinsics, observer_pose: Pose) -> np.ndarray:
    return observer_pose.rotation @ extrinsics.rotation


def p1e_disc_normal(
    conic: Conic, k: CameraIntrinsics, disc_radius: float
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Two (normal, center) circle poses consistent with an image ellipse.

    The image conic is lifted to the cone ``Q = K^T C K`` through the camera
    centre. Its circular sections have normals
    ``V [+-sqrt((l1-l2)/(l1-l3)), 0, sqrt((l2-l3)/(l1-l3))]`` for eigenvalues
    ``l1 >= l2 > 0 > l3``. Each section centre lies on the ray ``Q^-1 n`` and
    is scaled so the section radius equals ``disc_radius``. Normals are
    oriented towards the camera.
    """
    c = np.asarray(conic.matrix, dtype=float)
    if not np.all(np.isfinite(c)):
        raise NotAnEllipseError("conic has non-finite entries")
    q = k.matrix.T @ c @ k.matrix
    q = 0.5 * (q + q.T)
    w, v = np.linalg.eigh(q)
    npos = int((w > 0).sum())
    if npos == 1:
        q, w = -q, -w[::-1]
        v = v[:, ::-1]
    elif npos != 2:
        raise NotAnEllipseError(f"cone eigenvalue signature invalid: {w}")
    # w ascending: w[0] < 0 < w[1] <= w[2]
    l3, l2, l1 = w
    if not (l3 < 0 < l2) or min(abs(l3), l2) < 1e-12 * l1:
        raise NotAnEllipseError(f"cone eigenvalue signature invalid: {w}")
    e1, e3 = v[:, 2], v[:, 0]
    g = np.sqrt(max(l1 - l2, 0.0) / (l1 - l3))
    h = np.sqrt((l2 - l3) / (l1 - l3))
    q_inv = np.linalg.inv(q)
    out = []
    for sgn in ((1.0, -1.0) if g > 1e-12 else (1.0,)):
        n = sgn * g * e1 + h * e3
        n /= np.linalg.norm(n)
        s = q_inv @ n
        if s[2] < 0:
            s = -s
        # section radius at unit scale along s: rho^2 = -s'Qs / e'Qe for e _|_ n
        e = np.cross(n, [1.0, 0.0, 0.0])
        if np.linalg.norm(e) < 1e-6:
            e = np.cross(n, [0.0, 1.0, 0.0])
        e /= np.linalg.norm(e)
        num = -(s @ q @ s)
        den = e @ q @ e
        if num <= 0 or den <= 0:
            raise NotAnEllipseError("cone section is not a real circle")
        center = s * (disc_radius / np.sqrt(num / den))
        if n @ center > 0:
            n = -n
        out.append((n, center))
    if len(out) == 2 and np.dot(out[0][0], out[1][0]) > 1 - 1e-15:
        out = out[:1]
    return out


def disambiguate_normal(candidates, prior) -> np.ndarray:
    prior = np.asarray(prior, dtype=float)
    normals = [np.asarray(c[0] if isinstance(c, tuple) else c, dtype=float) for c in candidates]
    return max(normals, key=lambda n: float(n @ prior))


def mixture_normal(candidates, prior, cov) -> np.ndarray:
    """Candidate normals averaged with weights from their likelihood under the prior.

    When the prior cannot tell the candidates apart the result tends to their
    mean, so an uncertain prior does not lock onto one branch.
    """
    prior = np.asarray(prior, dtype=float)
    normals = np.array([np.asarray(c, dtype=float) for c in candidates])
    if len(normals) == 1:
        return normals[0]
    d = normals - prior
    md = np.einsum("ij,ij->i", d, np.linalg.solve(cov, d.T).T)
    w = np.exp(-0.5 * (md - md.min()))
    n = (w[:, None] * normals).sum(axis=0)
    return n / np.linalg.norm(n)
