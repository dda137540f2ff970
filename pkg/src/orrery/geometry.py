"""Value-semantic 3D math: vectors, poses, rays, pinhole projection,
homography estimation and planar pose recovery.

Conventions used across the whole engine:

  World frame (right-handed):
    - +Y is up; gravity points along -Y.
    - Horizontal planes are Y = const; plan-view motion happens in (Z, X).

  Camera frame (right-handed, standard computer vision):
    - +X right, +Y down, +Z forward along the optical axis.

  Image frame:
    - x right, y down, in pixels. A continuous pixel coordinate equals the
      integer index of the pixel whose center it falls on (pixel centers sit
      on the integer grid).

  Pose:
    - A Pose maps points from a source frame into a destination frame:
      ``p_dst = R @ p_src + t``. Camera extrinsics are world->camera poses;
      marker detections are marker->camera poses.

  Plan-view points:
    - Stored as (z, x) pairs. The planar manipulation step rotates about +Y
      by an angle and then translates along Z and X, in that component order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import BehindCameraError, DegenerateGeometryError, OutOfFrameError

# Tolerance table (single audit point for the geometric contracts).
GEOM_EPS = 1e-9          # pose orthonormality, generic geometric comparisons
PROJECTIVE_EPS = 1e-8    # homography comparisons after h33 normalization
UNIT_EPS = 1e-12         # ray direction unit-norm tolerance
RANK_EPS = 1e-9          # relative singular-value cutoff for degeneracy

TAU = 2.0 * math.pi


def _as_finite_array(value, shape, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def vec2(x: float, y: float) -> np.ndarray:
    """Finite 2-vector as a float64 array."""
    return _as_finite_array([x, y], (2,), "vec2")


def vec3(x: float, y: float, z: float) -> np.ndarray:
    """Finite 3-vector as a float64 array."""
    return _as_finite_array([x, y, z], (3,), "vec3")


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = math.remainder(a, TAU)
    if r <= -math.pi:
        r += TAU
    return r


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``p_dst = rotation @ p_src + translation``.

    rotation must be orthonormal with det = +1 within GEOM_EPS; translation
    must be finite. Instances are immutable.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _as_finite_array(self.rotation, (3, 3), "rotation")
        t = _as_finite_array(self.translation, (3,), "translation")
        if not np.allclose(r.T @ r, np.eye(3), atol=GEOM_EPS, rtol=0.0):
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation must have det = +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def transform(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return self.rotation @ p + self.translation

    def inverse(self) -> "Pose":
        rt = self.rotation.T.copy()
        return Pose(rt, -(rt @ self.translation))

    def __matmul__(self, other: "Pose") -> "Pose":
        """Composition: ``(a @ b).transform(p) == a.transform(b.transform(p))``."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)


@dataclass(frozen=True)
class Ray:
    """Half-line ``origin + t * direction`` with a unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = _as_finite_array(self.origin, (3,), "origin")
        d = _as_finite_array(self.direction, (3,), "direction")
        if abs(np.linalg.norm(d) - 1.0) > UNIT_EPS:
            raise ValueError("ray direction must be unit length within 1e-12")
        o.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera parameters in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the sensor")
        if self.width < 1 or self.height < 1:
            raise ValueError("sensor size must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class ManipulationDelta:
    """One planar manipulation step: rotate about +Y by ``yaw``, then add
    ``dz`` along Z and ``dx`` along X.

    The (dz, dx) component order mirrors the (z, x) storage order of
    plan-view points. The direct-kinematics source this realizes gives the
    translation vector without naming its components; interpreting the first
    entry as the Z offset and the second as the X offset is this engine's
    documented convention.
    """

    yaw: float
    dz: float
    dx: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.yaw, self.dz, self.dx)):
            raise ValueError("ManipulationDelta components must be finite")


def rotate_y_translate(p, delta: ManipulationDelta) -> np.ndarray:
    """Apply a planar manipulation step to a plan-view point ``p = (z, x)``.

    Returns ``(cos(yaw)*z - sin(yaw)*x + dz, sin(yaw)*z + cos(yaw)*x + dx)``.
    A Y coordinate carried alongside the plan-view pair is untouched by
    construction; this is a rigid motion of the horizontal plane.
    """
    p = _as_finite_array(p, (2,), "plan-view point")
    c, s = math.cos(delta.yaw), math.sin(delta.yaw)
    return np.array([c * p[0] - s * p[1] + delta.dz,
                     s * p[0] + c * p[1] + delta.dx])


def ray_plane_intersect(ray: Ray, plane_y: float) -> Optional[Tuple[np.ndarray, float]]:
    """Nearest forward intersection of ``ray`` with the plane Y = plane_y.

    Returns ``(point, t)`` with t > 0, or None when the ray is parallel to
    the plane or the plane lies behind the origin.
    """
    dy = ray.direction[1]
    if dy == 0.0:
        return None
    t = (plane_y - ray.origin[1]) / dy
    if t <= 0.0 or not math.isfinite(t):
        return None
    return ray.at(t), float(t)


def ray_sphere_intersect(ray: Ray, center, radius: float) -> Optional[float]:
    """Smallest t > 0 where the ray meets the sphere, or None."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    m = ray.origin - _as_finite_array(center, (3,), "center")
    b = float(np.dot(ray.direction, m))
    c = float(np.dot(m, m)) - radius * radius
    disc = b * b - c
    if disc < 0.0:
        return None
    s = math.sqrt(disc)
    t = -b - s
    if t > 0.0:
        return t
    t = -b + s
    if t > 0.0:
        return t
    return None


def project(K: Intrinsics, world_to_camera: Pose, world) -> np.ndarray:
    """Pinhole projection of a world point, in continuous pixel coordinates.

    Raises BehindCameraError when the camera-frame z of the point is <= 0.
    """
    c = world_to_camera.transform(_as_finite_array(world, (3,), "world point"))
    z = c[2]
    if z <= 0.0:
        raise BehindCameraError(f"point has camera-frame z = {z:.6g} <= 0")
    return np.array([K.fx * c[0] / z + K.cx, K.fy * c[1] / z + K.cy])


def unproject(K: Intrinsics, world_to_camera: Pose, pixel) -> Ray:
    """World-frame ray through the camera center and a pixel.

    The pixel must lie within the frame bounds ([0, width] x [0, height],
    edges inclusive so touches on the last row/column are accepted).
    ``project(K, world_to_camera, ray.at(t))`` returns the pixel for any
    t > 0.
    """
    px = _as_finite_array(pixel, (2,), "pixel")
    if not (0.0 <= px[0] <= K.width and 0.0 <= px[1] <= K.height):
        raise OutOfFrameError(f"pixel {px.tolist()} outside {K.width}x{K.height}")
    d_cam = np.array([(px[0] - K.cx) / K.fx, (px[1] - K.cy) / K.fy, 1.0])
    rt = world_to_camera.rotation.T
    origin = -(rt @ world_to_camera.translation)
    direction = rt @ d_cam
    return Ray(origin, direction / np.linalg.norm(direction))


def _normalizing_transform(pts: np.ndarray) -> np.ndarray:
    """Hartley normalization: centroid to origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    if d < 1e-12:
        raise DegenerateGeometryError("correspondence points are coincident")
    s = math.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * centroid[0]],
                     [0.0, s, -s * centroid[1]],
                     [0.0, 0.0, 1.0]])


def solve_homography(src, dst) -> np.ndarray:
    """Direct linear transform for the homography mapping src -> dst.

    Takes >= 4 correspondences as (n, 2) arrays (or sequences of pairs).
    Points are Hartley-normalized before building the 2n x 9 system; the
    solution is the smallest-singular-vector of the system, de-normalized
    and scaled so h33 = 1. Raises DegenerateGeometryError when the
    configuration is rank-deficient (e.g. 3 collinear source points).
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if src.shape[0] < 4 or src.shape != dst.shape:
        raise ValueError("need >= 4 source/destination correspondences")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValueError("correspondences contain NaN or Inf")

    t_src = _normalizing_transform(src)
    t_dst = _normalizing_transform(dst)
    ones = np.ones((src.shape[0], 1))
    sn = (t_src @ np.hstack([src, ones]).T).T
    dn = (t_dst @ np.hstack([dst, ones]).T).T

    n = src.shape[0]
    a = np.zeros((2 * n, 9))
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v

    _, sing, vt = np.linalg.svd(a)
    if sing[7] <= RANK_EPS * sing[0]:
        raise DegenerateGeometryError("degenerate correspondences (rank < 8)")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ hn @ t_src
    if abs(h[2, 2]) < 1e-12:
        raise DegenerateGeometryError("homography has h33 = 0")
    return h / h[2, 2]


def nearest_rotation(m) -> np.ndarray:
    """Orthonormal matrix with det = +1 nearest to ``m`` in Frobenius norm.

    Closed-form polar decomposition via SVD; raises on singular input.
    """
    m = _as_finite_array(m, (3, 3), "matrix")
    u, s, vt = np.linalg.svd(m)
    if s[2] <= 1e-12 * max(s[0], 1.0):
        raise DegenerateGeometryError("matrix is singular")
    d = np.sign(np.linalg.det(u @ vt))
    return (u * np.array([1.0, 1.0, d])) @ vt


def pose_from_homography(h, K: Intrinsics) -> Pose:
    """Recover the plane->camera pose from a plane-to-pixel homography.

    The homography maps plane coordinates (p, q) to pixels, where the plane
    point in its own 3D frame is (p, q, 0). With B = K^-1 H and lambda =
    1/|b1|, the columns give r1 = lambda*b1, r2 = lambda*b2, t = lambda*b3
    and r3 = r1 x r2; [r1 r2 r3] is snapped to the nearest rotation. The
    sign of lambda is chosen so t_z > 0 (plane origin in front of the
    camera), which flips r1, r2 and t together and leaves r3 = r1 x r2
    right-handed.
    """
    h = _as_finite_array(h, (3, 3), "homography")
    if abs(np.linalg.det(h)) < 1e-15:
        raise DegenerateGeometryError("homography is singular")
    b = np.linalg.solve(K.matrix(), h)
    n1 = np.linalg.norm(b[:, 0])
    if n1 < 1e-12:
        raise DegenerateGeometryError("homography column b1 is null")
    lam = 1.0 / n1
    if lam * b[2, 2] < 0.0:
        lam = -lam
    r1 = lam * b[:, 0]
    r2 = lam * b[:, 1]
    t = lam * b[:, 2]
    r = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    return Pose(r, t)


# --- rotation helpers (quaternions are w, x, y, z) ---


def rotation_y(angle: float) -> np.ndarray:
    """Right-handed rotation about +Y."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s],
                     [0.0, 1.0, 0.0],
                     [-s, 0.0, c]])


def yaw_of_rotation(r) -> float:
    """Y-axis rotation angle of a (near-)yaw-only rotation matrix."""
    r = np.asarray(r, dtype=np.float64)
    return math.atan2(r[0, 2], r[0, 0])


def quat_to_matrix(q) -> np.ndarray:
    q = _as_finite_array(q, (4,), "quaternion")
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("quaternion has zero norm")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(r) -> np.ndarray:
    """Unit quaternion (w >= 0) for a rotation matrix."""
    r = _as_finite_array(r, (3, 3), "rotation")
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array([(r[2, 1] - r[1, 2]) / s,
                      0.25 * s,
                      (r[0, 1] + r[1, 0]) / s,
                      (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] >= r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array([(r[0, 2] - r[2, 0]) / s,
                      (r[0, 1] + r[1, 0]) / s,
                      0.25 * s,
                      (r[1, 2] + r[2, 1]) / s])
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array([(r[1, 0] - r[0, 1]) / s,
                      (r[0, 2] + r[2, 0]) / s,
                      (r[1, 2] + r[2, 1]) / s,
                      0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def nlerp_quat(q0, q1, alpha: float) -> np.ndarray:
    """Normalized linear quaternion interpolation along the shorter arc."""
    q0 = _as_finite_array(q0, (4,), "q0")
    q1 = _as_finite_array(q1, (4,), "q1")
    if np.dot(q0, q1) < 0.0:
        q1 = -q1
    q = (1.0 - alpha) * q0 + alpha * q1
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("degenerate quaternion interpolation")
    return q / n


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> Pose:
    """World->camera extrinsics for a camera at ``eye`` looking at ``target``.

    ``up`` is a hint for the screen-up direction; it must not be parallel to
    the view direction. The camera frame follows the y-down convention.
    """
    eye = _as_finite_array(eye, (3,), "eye")
    target = _as_finite_array(target, (3,), "target")
    up = _as_finite_array(up, (3,), "up")
    forward = target - eye
    fn = np.linalg.norm(forward)
    if fn < 1e-12:
        raise ValueError("eye and target coincide")
    forward = forward / fn
    right = np.cross(-up, forward)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise ValueError("up direction is parallel to the view direction")
    right = right / rn
    down = np.cross(forward, right)
    r = np.vstack([right, down, forward])
    return Pose(nearest_rotation(r), -(r @ eye))
