import math

import numpy as np
import pytest

from orrery.errors import BehindCameraError, DegenerateGeometryError, OutOfFrameError
from orrery.geometry import (
    Intrinsics,
    ManipulationDelta,
    Pose,
    Ray,
    look_at,
    matrix_to_quat,
    nearest_rotation,
    nlerp_quat,
    pose_from_homography,
    project,
    quat_to_matrix,
    ray_plane_intersect,
    ray_sphere_intersect,
    rotate_y_translate,
    rotation_y,
    solve_homography,
    unproject,
    vec2,
    vec3,
    wrap_angle,
)

K = Intrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)


def random_rotation(rng) -> np.ndarray:
    # QR of a Gaussian matrix, sign-fixed to det +1
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def polar_rotation_oracle(m: np.ndarray) -> np.ndarray:
    # Independent route: Newton iteration X <- (X + X^-T)/2 converges to the
    # orthogonal polar factor of m.
    x = m.copy()
    for _ in range(100):
        nxt = 0.5 * (x + np.linalg.inv(x).T)
        if np.max(np.abs(nxt - x)) < 1e-15:
            x = nxt
            break
        x = nxt
    return x


# --- manipulation step ---


def test_rotate_y_translate_identity():
    out = rotate_y_translate(vec2(1, 0), ManipulationDelta(0.0, 0.0, 0.0))
    assert np.array_equal(out, [1.0, 0.0])


def test_rotate_y_translate_quarter_turn():
    out = rotate_y_translate(vec2(1, 0), ManipulationDelta(math.pi / 2, 0.0, 0.0))
    assert np.allclose(out, [0.0, 1.0], atol=1e-15)


def test_rotate_y_translate_pure_translation():
    out = rotate_y_translate(vec2(0, 0), ManipulationDelta(1.234, 2.0, 3.0))
    assert np.array_equal(out, [2.0, 3.0])


def test_rotate_y_translate_45deg():
    out = rotate_y_translate(vec2(1, 1), ManipulationDelta(math.pi / 4, 0.0, 0.0))
    assert np.allclose(out, [0.0, math.sqrt(2.0)], atol=1e-15)


def test_rotate_y_translate_rigidity():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a = rng.uniform(-5, 5, size=2)
        b = rng.uniform(-5, 5, size=2)
        d = ManipulationDelta(rng.uniform(-math.pi, math.pi), rng.uniform(-2, 2), rng.uniform(-2, 2))
        da = rotate_y_translate(a, d)
        db = rotate_y_translate(b, d)
        assert abs(np.linalg.norm(da - db) - np.linalg.norm(a - b)) < 1e-12


def test_rotate_y_translate_composition():
    rng = np.random.default_rng(8)
    for _ in range(100):
        p = rng.uniform(-3, 3, size=2)
        d1 = ManipulationDelta(rng.uniform(-3, 3), rng.uniform(-1, 1), rng.uniform(-1, 1))
        d2 = ManipulationDelta(rng.uniform(-3, 3), rng.uniform(-1, 1), rng.uniform(-1, 1))
        two_step = rotate_y_translate(rotate_y_translate(p, d1), d2)
        # single affine map with rotation yaw1+yaw2
        c, s = math.cos(d2.yaw), math.sin(d2.yaw)
        shift = np.array([c * d1.dz - s * d1.dx + d2.dz, s * d1.dz + c * d1.dx + d2.dx])
        combined = rotate_y_translate(p, ManipulationDelta(d1.yaw + d2.yaw, 0.0, 0.0)) + shift
        assert np.allclose(two_step, combined, atol=1e-9)


def test_rotate_y_translate_rejects_nan():
    with pytest.raises(ValueError):
        rotate_y_translate(np.array([np.nan, 0.0]), ManipulationDelta(0, 0, 0))
    with pytest.raises(ValueError):
        ManipulationDelta(float("inf"), 0.0, 0.0)


# --- rays ---


def test_ray_plane_straight_down():
    ray = Ray(vec3(0, 5, 0), vec3(0, -1, 0))
    point, t = ray_plane_intersect(ray, 0.0)
    assert t == 5.0
    assert np.allclose(point, [0, 0, 0])


def test_ray_plane_parallel_is_none():
    assert ray_plane_intersect(Ray(vec3(0, 1, 0), vec3(1, 0, 0)), 0.0) is None


def test_ray_plane_diagonal():
    d = np.array([0.0, -1.0, 1.0]) / math.sqrt(2.0)
    point, t = ray_plane_intersect(Ray(vec3(0, 1, 0), d), 0.0)
    assert abs(t - math.sqrt(2.0)) < 1e-15
    assert np.allclose(point, [0, 0, 1], atol=1e-15)


def test_ray_plane_behind_origin_is_none():
    assert ray_plane_intersect(Ray(vec3(0, 1, 0), vec3(0, 1, 0)), 0.0) is None


def test_ray_sphere_head_on():
    t = ray_sphere_intersect(Ray(vec3(0, 0, -5), vec3(0, 0, 1)), vec3(0, 0, 0), 1.0)
    assert abs(t - 4.0) < 1e-12


def test_ray_sphere_miss():
    t = ray_sphere_intersect(Ray(vec3(2, 0, -5), vec3(0, 0, 1)), vec3(0, 0, 0), 1.0)
    assert t is None


def test_ray_sphere_from_center():
    t = ray_sphere_intersect(Ray(vec3(0, 0, 0), vec3(0, 1, 0)), vec3(0, 0, 0), 1.0)
    assert abs(t - 1.0) < 1e-12


# --- projection ---


def test_project_optical_axis():
    px = project(K, Pose.identity(), vec3(0, 0, 2))
    assert np.allclose(px, [K.cx, K.cy])


def test_project_offset_point():
    px = project(K, Pose.identity(), vec3(1, 0, 2))
    assert np.allclose(px, [570.0, K.cy])


def test_project_behind_camera_raises():
    with pytest.raises(BehindCameraError):
        project(K, Pose.identity(), vec3(0, 0, -1.0))


def test_unproject_center_ray():
    ray = unproject(K, Pose.identity(), vec2(K.cx, K.cy))
    assert np.allclose(ray.direction, [0, 0, 1], atol=1e-15)
    assert np.allclose(ray.origin, [0, 0, 0])


def test_unproject_out_of_bounds():
    with pytest.raises(OutOfFrameError):
        unproject(K, Pose.identity(), vec2(-1, 0))
    with pytest.raises(OutOfFrameError):
        unproject(K, Pose.identity(), vec2(0, 481))


def test_project_unproject_round_trip():
    rng = np.random.default_rng(11)
    for _ in range(100):
        pose = Pose(random_rotation(rng), rng.uniform(-1, 1, size=3))
        px = rng.uniform([0, 0], [K.width, K.height])
        ray = unproject(K, pose, px)
        point = ray.at(rng.uniform(0.2, 8.0))
        assert np.allclose(project(K, pose, point), px, atol=1e-6)


def test_unproject_round_trip_covers_frame_edges():
    pose = look_at(vec3(0.2, 1.0, -0.4), vec3(0, 0, 0), up=(0, 0, -1))
    for px in ([0, 0], [640, 480], [0, 480], [640, 0], [123.25, 456.75]):
        ray = unproject(K, pose, vec2(*px))
        assert np.allclose(project(K, pose, ray.at(2.5)), px, atol=1e-6)


# --- homography ---


def unit_square():
    return np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def test_homography_identity():
    h = solve_homography(unit_square(), unit_square())
    assert np.allclose(h, np.eye(3), atol=1e-10)


def test_homography_scale():
    h = solve_homography(unit_square(), 2.0 * unit_square())
    assert np.allclose(h, np.diag([2.0, 2.0, 1.0]), atol=1e-10)


def apply_h(h, pts):
    q = (h @ np.hstack([pts, np.ones((len(pts), 1))]).T).T
    return q[:, :2] / q[:, 2:3]


def test_homography_recovers_known_map():
    rng = np.random.default_rng(3)
    for _ in range(50):
        h_true = np.eye(3) + rng.uniform(-0.3, 0.3, size=(3, 3))
        h_true[2, 2] = 1.0
        src = rng.uniform(-2, 2, size=(4, 2))
        # keep the configuration well away from collinear
        if abs(np.linalg.det(np.hstack([src[:3], np.ones((3, 1))]))) < 0.5:
            continue
        dst = apply_h(h_true, src)
        h = solve_homography(src, dst)
        assert np.allclose(h, h_true / h_true[2, 2], atol=1e-8)


def test_homography_scale_consistency():
    rng = np.random.default_rng(4)
    src = rng.uniform(-1, 1, size=(6, 2))
    dst = apply_h(np.array([[1.1, 0.02, 0.3], [-0.04, 0.95, -0.2], [0.01, 0.02, 1.0]]), src)
    h1 = solve_homography(src, dst)
    h2 = solve_homography(src, dst * 3.7)
    probe = rng.uniform(-1, 1, size=(20, 2))
    assert np.allclose(apply_h(h1, probe) * 3.7, apply_h(h2, probe), atol=1e-8)


def test_homography_collinear_raises():
    src = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    with pytest.raises(DegenerateGeometryError):
        solve_homography(src, unit_square())


def test_homography_duplicate_points_raise():
    src = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(DegenerateGeometryError):
        solve_homography(src, unit_square())


# --- planar pose recovery ---


def homography_from_plane_pose(pose: Pose) -> np.ndarray:
    # forward construction: plane point (p, q, 0) -> pixel
    r = pose.rotation
    h = K.matrix() @ np.column_stack([r[:, 0], r[:, 1], pose.translation])
    return h / h[2, 2]


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def test_pose_from_homography_frontal():
    pose = Pose(np.eye(3), vec3(0, 0, 1))
    rec = pose_from_homography(homography_from_plane_pose(pose), K)
    assert np.allclose(rec.rotation, pose.rotation, atol=1e-6)
    assert np.allclose(rec.translation, pose.translation, atol=1e-6)


def test_pose_from_homography_tilted():
    pose = Pose(rot_x(math.radians(30)), vec3(0.1, 0, 0.8))
    rec = pose_from_homography(homography_from_plane_pose(pose), K)
    assert np.allclose(rec.rotation, pose.rotation, atol=1e-6)
    assert np.allclose(rec.translation, pose.translation, atol=1e-6)


def test_pose_from_homography_analytic_frontal_distance_two():
    h = K.matrix() @ np.column_stack([np.eye(3)[:, 0], np.eye(3)[:, 1], [0.0, 0.0, 2.0]])
    rec = pose_from_homography(h / h[2, 2], K)
    assert np.allclose(rec.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(rec.translation, [0, 0, 2.0], atol=1e-9)


def test_pose_from_homography_round_trip_random():
    rng = np.random.default_rng(5)
    done = 0
    while done < 100:
        tilt = rng.uniform(0, math.radians(74))
        roll = rng.uniform(-math.pi, math.pi)
        r = rotation_y(roll) @ rot_x(tilt)
        t = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(0.4, 3.0)])
        pose = Pose(r, t)
        rec = pose_from_homography(homography_from_plane_pose(pose), K)
        angle = math.acos(min(1.0, max(-1.0, (np.trace(rec.rotation.T @ pose.rotation) - 1) / 2)))
        assert angle < 1e-6
        assert np.linalg.norm(rec.translation - t) < 1e-6
        done += 1


def test_pose_from_homography_sign_flip():
    # homography scaled by -1 must give the same front-side pose
    pose = Pose(rot_x(0.4), vec3(0.05, -0.02, 1.2))
    h = homography_from_plane_pose(pose)
    rec = pose_from_homography(-h, K)
    assert np.allclose(rec.translation, pose.translation, atol=1e-6)
    assert np.allclose(rec.rotation, pose.rotation, atol=1e-6)


def test_pose_from_homography_degenerate():
    with pytest.raises(DegenerateGeometryError):
        pose_from_homography(np.zeros((3, 3)), K)


# --- nearest rotation ---


def test_nearest_rotation_fixed_point():
    rng = np.random.default_rng(6)
    r = random_rotation(rng)
    assert np.allclose(nearest_rotation(r), r, atol=1e-12)


def test_nearest_rotation_scale_removal():
    rng = np.random.default_rng(9)
    r = random_rotation(rng)
    assert np.allclose(nearest_rotation(1.001 * r), r, atol=1e-9)


def test_nearest_rotation_vs_polar_oracle():
    rng = np.random.default_rng(10)
    for _ in range(50):
        r = random_rotation(rng)
        m = r + rng.uniform(-1e-3, 1e-3, size=(3, 3))
        out = nearest_rotation(m)
        assert np.allclose(out.T @ out, np.eye(3), atol=1e-12)
        assert np.linalg.det(out) > 0
        assert np.max(np.abs(out - r)) < 2e-3
        assert np.allclose(out, polar_rotation_oracle(m), atol=1e-9)


def test_nearest_rotation_singular_raises():
    m = np.outer([1.0, 2.0, 3.0], [1.0, 0.0, 0.0])
    with pytest.raises(DegenerateGeometryError):
        nearest_rotation(m)


# --- pose and quaternion plumbing ---


def test_pose_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 1.01, np.zeros(3))


def test_pose_rejects_reflection():
    m = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError):
        Pose(m, np.zeros(3))


def test_pose_compose_and_inverse():
    rng = np.random.default_rng(12)
    a = Pose(random_rotation(rng), rng.normal(size=3))
    b = Pose(random_rotation(rng), rng.normal(size=3))
    p = rng.normal(size=3)
    assert np.allclose((a @ b).transform(p), a.transform(b.transform(p)), atol=1e-12)
    assert np.allclose((a @ a.inverse()).transform(p), p, atol=1e-12)


def test_quat_matrix_round_trip():
    rng = np.random.default_rng(13)
    for _ in range(50):
        r = random_rotation(rng)
        assert np.allclose(quat_to_matrix(matrix_to_quat(r)), r, atol=1e-12)


def test_nlerp_endpoints():
    rng = np.random.default_rng(14)
    q0 = matrix_to_quat(random_rotation(rng))
    q1 = matrix_to_quat(random_rotation(rng))
    assert np.allclose(nlerp_quat(q0, q1, 0.0), q0, atol=1e-15)
    assert np.allclose(np.abs(nlerp_quat(q0, q1, 1.0)), np.abs(q1), atol=1e-15)
    mid = nlerp_quat(q0, q1, 0.5)
    assert abs(np.linalg.norm(mid) - 1.0) < 1e-12


def test_wrap_angle_range():
    for a in np.linspace(-20, 20, 400):
        w = wrap_angle(float(a))
        assert -math.pi < w <= math.pi
        assert abs(math.sin(w) - math.sin(a)) < 1e-12
        assert abs(math.cos(w) - math.cos(a)) < 1e-12


def test_look_at_points_camera_at_target():
    pose = look_at(vec3(0, 1, 0), vec3(0, 0, 0), up=(0, 0, -1))
    px = project(K, pose, vec3(0, 0, 0))
    assert np.allclose(px, [K.cx, K.cy], atol=1e-9)
    # +Z world maps toward image bottom with the -Z up hint
    below = project(K, pose, vec3(0, 0, 0.1))
    assert below[1] > K.cy
