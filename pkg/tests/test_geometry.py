import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from oracles import circle_image_points, exact_conic

from evprop.detect import Conic, fit_conic_direct
from evprop.geometry import (
    CameraIntrinsics,
    DepthUnavailable,
    Extrinsics,
    NotAnEllipseError,
    Pose,
    backproject,
    cam_to_world,
    depth_from_span,
    disambiguate_normal,
    mixture_normal,
    p1e_disc_normal,
    project,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_multiply,
    quat_to_matrix,
    rotation_between,
    world_to_cam,
)

K = CameraIntrinsics()


def angle_deg(a, b):
    return math.degrees(math.acos(np.clip(np.dot(a, b) / np.linalg.norm(a) / np.linalg.norm(b), -1, 1)))


def test_depth_examples():
    assert depth_from_span(100, 0.5, 1000) == pytest.approx(5.0)
    assert depth_from_span(66, 0.33, 800) == pytest.approx(4.0)
    with pytest.raises(DepthUnavailable):
        depth_from_span(1.0, 0.5, 1000)
    with pytest.raises(DepthUnavailable):
        depth_from_span(0.0, 0.5, 1000)


@given(st.floats(3, 500), st.floats(0.05, 2), st.floats(100, 2000), st.floats(1.1, 10))
def test_depth_scale_consistent(span, d, f, k):
    assert depth_from_span(span * k, d, f * k) == pytest.approx(depth_from_span(span, d, f))


def test_backproject_examples():
    assert np.allclose(backproject((K.cx, K.cy), 3, K), (0, 0, 3))
    assert np.allclose(backproject((K.cx + K.fx, K.cy), 1, K), (1, 0, 1))


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 20))
def test_project_backproject_round_trip(x, y, z):
    p = np.array([x, y, z])
    assert np.allclose(backproject(project(p, K), z, K), p, atol=1e-9)


def test_identity_chain():
    p = np.array([0.3, -0.2, 4.0])
    assert np.allclose(cam_to_world(p, Extrinsics(), Pose()), p)


def test_downward_camera_chain():
    down = Extrinsics(quat_to_matrix(quat_from_axis_angle((1, 0, 0), math.pi)))
    pose = Pose((0, 0, 10))
    assert np.allclose(cam_to_world((0, 0, 5), down, pose), (0, 0, 5))


def test_observer_translation_is_additive():
    ext = Extrinsics(quat_to_matrix(quat_from_axis_angle((0, 1, 1), 0.4)), (0.1, 0, -0.05))
    p = np.array([0.2, 0.1, 3.0])
    t = np.array([1.0, -2.0, 0.5])
    assert np.allclose(cam_to_world(p, ext, Pose(t)), cam_to_world(p, ext, Pose()) + t)


unit_quats = st.tuples(*[st.floats(-1, 1)] * 4).filter(lambda q: np.linalg.norm(q) > 0.1)
vec3 = st.tuples(*[st.floats(-5, 5)] * 3)


@settings(max_examples=200)
@given(unit_quats, unit_quats, vec3, vec3, vec3)
def test_world_cam_round_trip(q_ext, q_obs, t_ext, t_obs, p):
    ext = Extrinsics.from_quaternion(np.array(q_ext) / np.linalg.norm(q_ext), t_ext)
    pose = Pose(t_obs, q_obs)
    assert abs(np.linalg.norm(pose.orientation) - 1) < 1e-9
    back = cam_to_world(world_to_cam(p, ext, pose), ext, pose)
    assert np.allclose(back, p, atol=1e-9)


@settings(max_examples=200)
@given(unit_quats)
def test_quaternion_matrix_round_trip(q):
    q = np.array(q) / np.linalg.norm(q)
    r = quat_to_matrix(q)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1)
    q2 = quat_from_matrix(r)
    assert np.allclose(q2, q, atol=1e-9) or np.allclose(q2, -q, atol=1e-9)


@given(unit_quats, unit_quats)
def test_quaternion_product_composes_rotations(a, b):
    a = np.array(a) / np.linalg.norm(a)
    b = np.array(b) / np.linalg.norm(b)
    assert np.allclose(quat_to_matrix(quat_multiply(a, b)), quat_to_matrix(a) @ quat_to_matrix(b))


@given(st.tuples(*[st.floats(-1, 1)] * 3), st.tuples(*[st.floats(-1, 1)] * 3))
def test_rotation_between_maps_a_to_b(a, b):
    a, b = np.array(a), np.array(b)
    assume(np.linalg.norm(a) > 0.1 and np.linalg.norm(b) > 0.1)
    a /= np.linalg.norm(a)
    b /= np.linalg.norm(b)
    r = rotation_between(a, b)
    assert np.allclose(r @ a, b, atol=1e-9)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-9)


def test_extrinsics_reject_reflection():
    with pytest.raises(ValueError):
        Extrinsics(np.diag([1.0, 1.0, -1.0]))


def test_intrinsics_validated():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=0)
    with pytest.raises(ValueError):
        CameraIntrinsics(cx=700)


# ---- disc normal from an ellipse

def test_fronto_parallel_centered_circle():
    cands = p1e_disc_normal(exact_conic((0, 0, 2), (0, 0, -1), 0.1), K, 0.1)
    assert len(cands) == 1
    n, c = cands[0]
    assert np.allclose(n, (0, 0, -1), atol=1e-9)
    assert np.allclose(c, (0, 0, 2), atol=1e-9)


def test_tilted_circle_rendered_and_fit():
    tilt = math.radians(20)
    normal = np.array([0, math.sin(tilt), -math.cos(tilt)])
    centre = np.array([0.1, -0.05, 1.0])
    pts = circle_image_points(centre, normal, 0.1, K, 360)
    cands = p1e_disc_normal(fit_conic_direct(pts), K, 0.1)
    best = min(cands, key=lambda c: angle_deg(c[0], normal))
    assert angle_deg(best[0], normal) < 1
    assert np.allclose(best[1], centre, atol=1e-3)
    for n, _ in cands:
        assert abs(np.linalg.norm(n) - 1) < 1e-9
        assert n[2] < 0  # faces the camera


def test_degenerate_conic_rejected():
    # two lines u = 0 and v = 0: the conic uv = 0
    lines = Conic(np.array([[0, 0.5, 0], [0.5, 0, 0], [0, 0, 0.0]]))
    with pytest.raises(NotAnEllipseError):
        p1e_disc_normal(lines, K, 0.1)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, math.radians(45)), st.floats(0, 2 * math.pi), st.floats(-0.3, 0.3),
       st.floats(-0.3, 0.3), st.floats(0.5, 3.0))
def test_p1e_left_inverse_of_projection(tilt, azim, x, y, z):
    normal = np.array([math.sin(tilt) * math.cos(azim), math.sin(tilt) * math.sin(azim), -math.cos(tilt)])
    centre = np.array([x, y, z])
    assume(np.dot(normal, centre) < -0.05 * z)  # disc seen from its front face, not edge-on
    cands = p1e_disc_normal(exact_conic(centre, normal, 0.1), K, 0.1)
    errs = [angle_deg(n, normal) for n, _ in cands]
    assert min(errs) <= 0.1
    i = int(np.argmin(errs))
    assert np.allclose(cands[i][1], centre, atol=1e-6 * z + 1e-9)
    for n, _ in cands:
        assert abs(np.linalg.norm(n) - 1) < 1e-9


def test_p1e_with_half_pixel_noise():
    rng = np.random.default_rng(0)
    errs = []
    for _ in range(100):
        tilt = rng.uniform(0, math.radians(45))
        azim = rng.uniform(0, 2 * math.pi)
        normal = np.array([math.sin(tilt) * math.cos(azim), math.sin(tilt) * math.sin(azim), -math.cos(tilt)])
        centre = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(0.6, 1.2)])
        pts = circle_image_points(centre, normal, 0.1, K, 360) + rng.normal(0, 0.5, (360, 2))
        cands = p1e_disc_normal(fit_conic_direct(pts), K, 0.1)
        errs.append(min(angle_deg(n, normal) for n, _ in cands))
    assert max(errs) <= 5


def test_disambiguation_examples():
    n = np.array([0, 0, 1.0])
    assert np.allclose(disambiguate_normal([n, n], n), n)
    a = np.array([math.sin(math.radians(15)), 0, math.cos(math.radians(15))])
    b = np.array([-a[0], 0, a[2]])
    prior = np.array([math.sin(math.radians(10)), 0, math.cos(math.radians(10))])
    assert np.allclose(disambiguate_normal([b, a], prior), a)
    up = np.array([0, 0, 1.0])
    t10 = np.array([math.sin(math.radians(10)), 0, math.cos(math.radians(10))])
    t170 = np.array([math.sin(math.radians(170)), 0, math.cos(math.radians(170))])
    assert np.allclose(disambiguate_normal([t170, t10], up), t10)


def test_mixture_normal_limits():
    a = np.array([math.sin(0.3), 0, math.cos(0.3)])
    b = np.array([-math.sin(0.3), 0, math.cos(0.3)])
    # a confident prior near one candidate selects it
    tight = mixture_normal([a, b], a, np.eye(3) * 1e-4)
    assert np.allclose(tight, a)
    # an uninformative prior averages the branches
    wide = mixture_normal([a, b], np.array([0, 0, 1.0]), np.eye(3) * 1e4)
    assert np.allclose(wide, (0, 0, 1), atol=1e-6)
    assert np.allclose(mixture_normal([a], b, np.eye(3)), a)
