"""Camera sources: a deterministic synthetic renderer and an image-directory
player.

The synthetic source renders a world of fiducial markers as
perspective-correct textured quads (nearest-neighbor sampling, no
anti-aliasing) from a keyframed camera trajectory, and exposes the exact
camera pose and projected marker corners as ground truth for tests. The
directory source plays back PNG/PPM files at a fixed rate.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import BehindCameraError, ConfigError, SourceStoppedError
from .frames import Frame, PixelFormat, solid_frame
from .geometry import Intrinsics, Pose, nlerp_quat, project, quat_to_matrix
from .imgio import load_image
from .markers import MarkerSpec, cell_grid, marker_corners_3d

_NEAR = 1e-6
_AA_SUBSAMPLES = 8  # per axis, on boundary pixels only


@dataclass(frozen=True)
class WorldMarker:
    spec: MarkerSpec
    pose: Pose  # marker -> world


@dataclass(frozen=True)
class WorldDescription:
    markers: Tuple[WorldMarker, ...]
    background: Tuple[int, int, int] = (220, 220, 220)


@dataclass(frozen=True)
class TrajectoryKeyframe:
    t: float
    position: np.ndarray
    quat: np.ndarray  # w, x, y, z; camera -> world orientation


class Trajectory:
    """Keyframed camera path; linear position, normalized quaternion
    interpolation, clamped at both ends so every t is defined."""

    def __init__(self, keyframes: Sequence[TrajectoryKeyframe]):
        if not keyframes:
            raise ConfigError("trajectory needs at least one keyframe")
        frames = sorted(keyframes, key=lambda k: k.t)
        self._times = [k.t for k in frames]
        self._frames = list(frames)

    def camera_to_world(self, t: float) -> Pose:
        frames = self._frames
        if t <= self._times[0]:
            kf = frames[0]
            return Pose(quat_to_matrix(kf.quat), kf.position)
        if t >= self._times[-1]:
            kf = frames[-1]
            return Pose(quat_to_matrix(kf.quat), kf.position)
        i = bisect.bisect_right(self._times, t) - 1
        a, b = frames[i], frames[i + 1]
        alpha = (t - a.t) / (b.t - a.t)
        pos = (1.0 - alpha) * np.asarray(a.position) + alpha * np.asarray(b.position)
        quat = nlerp_quat(a.quat, b.quat, alpha)
        return Pose(quat_to_matrix(quat), pos)

    def world_to_camera(self, t: float) -> Pose:
        return self.camera_to_world(t).inverse()


class CameraSource:
    """Base class: start/stop lifecycle plus per-timestamp capture."""

    def __init__(self, intrinsics: Intrinsics):
        self.intrinsics = intrinsics
        self._started = False

    def start(self) -> None:
        self._started = True

    def stop(self) -> None:
        self._started = False

    def _check_started(self) -> None:
        if not self._started:
            raise SourceStoppedError("camera source is not started")

    def capture(self, t: float, seq: int = 0) -> Frame:
        raise NotImplementedError


class SyntheticSource(CameraSource):
    def __init__(self, world: WorldDescription, trajectory: Trajectory,
                 intrinsics: Intrinsics):
        super().__init__(intrinsics)
        self.world = world
        self.trajectory = trajectory
        self._grids = {m.spec.id: cell_grid(m.spec) for m in world.markers}

    def capture(self, t: float, seq: int = 0) -> Frame:
        self._check_started()
        K = self.intrinsics
        bg = (*self.world.background, 255)
        frame = solid_frame(K.width, K.height, bg, seq=seq, t=t)
        if not self.world.markers:
            return frame
        out = np.array(frame.pixels)  # writable copy
        w2c = self.trajectory.world_to_camera(t)
        for marker in self.world.markers:
            self._draw_marker(out, marker, w2c)
        return Frame(K.width, K.height, PixelFormat.RGBA8, out, seq=seq, t=t)

    def _texture_values(self, grid: np.ndarray, hinv: np.ndarray, half: float,
                        xs: np.ndarray, ys: np.ndarray):
        """Marker gray sampled at continuous pixel coordinates.

        Returns (values, inside): values are 0 outside the marker square and
        the 6x6 cell gray inside.
        """
        q = np.stack([xs, ys, np.ones_like(xs)], axis=-1) @ hinv.T
        wq = q[..., 2]
        valid = wq > _NEAR
        with np.errstate(divide="ignore", invalid="ignore"):
            mx = np.where(valid, q[..., 0] / wq, np.inf)
            mz = np.where(valid, q[..., 1] / wq, np.inf)
        inside = valid & (np.abs(mx) <= half) & (np.abs(mz) <= half)
        size = 2.0 * half
        zeros = np.zeros(mx.shape, dtype=np.int64)
        col = np.clip(np.floor((mx + half) / size * 6.0, where=inside, out=zeros.astype(np.float64)), 0, 5).astype(np.int64)
        row = np.clip(np.floor((mz + half) / size * 6.0, where=inside, out=zeros.astype(np.float64)), 0, 5).astype(np.int64)
        values = np.where(inside, grid[row, col].astype(np.float64), 0.0)
        return values, inside

    def _draw_marker(self, out: np.ndarray, marker: WorldMarker, w2c: Pose) -> None:
        K = self.intrinsics
        m2c = w2c @ marker.pose
        size = marker.spec.size_m
        half = size / 2.0
        corners_cam = (m2c.rotation @ marker_corners_3d(size).T).T + m2c.translation
        if np.any(corners_cam[:, 2] <= _NEAR):
            return  # markers straddling the camera plane are not drawn
        px = corners_cam[:, :2] / corners_cam[:, 2:3] * [K.fx, K.fy] + [K.cx, K.cy]
        x0 = max(0, int(np.floor(px[:, 0].min())) - 1)
        x1 = min(K.width - 1, int(np.ceil(px[:, 0].max())) + 1)
        y0 = max(0, int(np.floor(px[:, 1].min())) - 1)
        y1 = min(K.height - 1, int(np.ceil(px[:, 1].max())) + 1)
        if x0 > x1 or y0 > y1:
            return
        # homography: marker plan (X, Z, 1) -> pixel homogeneous, w = camera z
        r = m2c.rotation
        h = K.matrix() @ np.column_stack([r[:, 0], r[:, 2], m2c.translation])
        hinv = np.linalg.inv(h)
        grid = self._grids[marker.spec.id]
        xs, ys = np.meshgrid(np.arange(x0, x1 + 1, dtype=np.float64),
                             np.arange(y0, y1 + 1, dtype=np.float64))
        center_vals, inside = self._texture_values(grid, hinv, half, xs, ys)
        # Pixels whose corner probes disagree with the center straddle a
        # texture or marker boundary; those get a supersampled box-filtered
        # value so the image carries true sub-pixel edge positions.
        center_code = np.where(inside, center_vals, -1.0)
        boundary = np.zeros(center_vals.shape, dtype=bool)
        for dx, dy in ((-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)):
            pv, pin = self._texture_values(grid, hinv, half, xs + dx, ys + dy)
            boundary |= np.where(pin, pv, -1.0) != center_code
        paint = inside | boundary
        if not np.any(paint):
            return
        bg = np.asarray(self.world.background, dtype=np.float64)
        channels = np.repeat(center_vals[:, :, None], 3, axis=2)
        if np.any(boundary):
            s = _AA_SUBSAMPLES
            offs = (np.arange(s) + 0.5) / s - 0.5
            ox, oy = np.meshgrid(offs, offs)
            bx = xs[boundary][:, None] + ox.ravel()[None, :]
            by = ys[boundary][:, None] + oy.ravel()[None, :]
            sub_vals, sub_in = self._texture_values(grid, hinv, half, bx, by)
            marker_part = sub_vals.mean(axis=1)
            coverage = sub_in.mean(axis=1)
            channels[boundary] = (marker_part[:, None]
                                  + np.outer(1.0 - coverage, bg))
        shade = np.floor(channels + 0.5).astype(np.uint8)
        region = out[y0 : y1 + 1, x0 : x1 + 1]
        region[paint, :3] = shade[paint]
        region[paint, 3] = 255

    def ground_truth(self, t: float) -> "SyntheticTruth":
        w2c = self.trajectory.world_to_camera(t)
        corners: Dict[int, Optional[np.ndarray]] = {}
        for marker in self.world.markers:
            m2c = w2c @ marker.pose
            try:
                pts = np.array([project(self.intrinsics, m2c, c)
                                for c in marker_corners_3d(marker.spec.size_m)])
            except BehindCameraError:
                corners[marker.spec.id] = None
                continue
            corners[marker.spec.id] = pts
        return SyntheticTruth(world_to_camera=w2c, marker_corners_px=corners)


@dataclass(frozen=True)
class SyntheticTruth:
    world_to_camera: Pose
    marker_corners_px: Dict[int, Optional[np.ndarray]]


class DirectorySource(CameraSource):
    """Plays image files from a directory in name order at a fixed rate;
    frame index is floor(t * fps) clamped to the last image."""

    SUFFIXES = (".png", ".ppm")

    def __init__(self, path, fps: float, intrinsics: Intrinsics):
        super().__init__(intrinsics)
        if fps <= 0:
            raise ConfigError("directory source fps must be positive")
        self.path = Path(path)
        self.fps = fps
        self.files = sorted(p for p in self.path.iterdir()
                            if p.suffix.lower() in self.SUFFIXES)
        if not self.files:
            raise ConfigError(f"no decodable images in {self.path}")
        self._cache: Dict[int, Frame] = {}

    def capture(self, t: float, seq: int = 0) -> Frame:
        self._check_started()
        idx = min(max(int(t * self.fps), 0), len(self.files) - 1)
        if idx not in self._cache:
            self._cache[idx] = load_image(self.files[idx])
        frame = self._cache[idx]
        return frame.with_seq_t(seq, t)


# --- configuration ---


def intrinsics_from_config(cfg: dict) -> Intrinsics:
    try:
        return Intrinsics(fx=float(cfg["fx"]), fy=float(cfg["fy"]),
                          cx=float(cfg["cx"]), cy=float(cfg["cy"]),
                          width=int(cfg["width"]), height=int(cfg["height"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad intrinsics config: {exc}") from exc


def pose_from_config(cfg: dict) -> Pose:
    try:
        return Pose(quat_to_matrix(np.asarray(cfg["quat_wxyz"], dtype=np.float64)),
                    np.asarray(cfg["position"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad pose config: {exc}") from exc


def trajectory_from_config(entries) -> Trajectory:
    keyframes = []
    for e in entries:
        try:
            keyframes.append(TrajectoryKeyframe(
                t=float(e["t"]),
                position=np.asarray(e["position"], dtype=np.float64),
                quat=np.asarray(e["quat_wxyz"], dtype=np.float64)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad trajectory keyframe {e!r}: {exc}") from exc
    return Trajectory(keyframes)


def load_source(cfg: dict, base_dir,
                marker_lookup: Optional[Dict[int, MarkerSpec]] = None) -> CameraSource:
    """Build a camera source from its JSON configuration.

    Synthetic world markers may carry their code inline as "bits"; otherwise
    the code is resolved by id from ``marker_lookup`` (normally the loaded
    marker bases).
    """
    kind = cfg.get("kind")
    intr = intrinsics_from_config(cfg.get("intrinsics", {}))
    if kind == "synthetic":
        markers = []
        for entry in cfg.get("world", {}).get("markers", []):
            try:
                marker_id = int(entry["id"])
                size_m = float(entry["size_m"])
                pose = pose_from_config(entry["pose"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad world marker {entry!r}: {exc}") from exc
            if "bits" in entry:
                spec = MarkerSpec.from_bit_string(marker_id, entry["bits"], size_m)
            elif marker_lookup and marker_id in marker_lookup:
                spec = MarkerSpec(marker_id, marker_lookup[marker_id].bits, size_m)
            else:
                raise ConfigError(
                    f"world marker {marker_id} has no bits and no base entry")
            markers.append(WorldMarker(spec=spec, pose=pose))
        background = tuple(cfg.get("world", {}).get("background", (220, 220, 220)))
        if len(background) != 3:
            raise ConfigError("background must be [r, g, b]")
        trajectory = trajectory_from_config(cfg.get("trajectory", []))
        return SyntheticSource(WorldDescription(tuple(markers), background),
                               trajectory, intr)
    if kind == "directory":
        try:
            path = Path(base_dir) / cfg["path"]
            fps = float(cfg.get("fps", 30.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad directory source config: {exc}") from exc
        return DirectorySource(path, fps, intr)
    raise ConfigError(f"unknown source kind {kind!r}")


def load_source_file(path, marker_lookup=None) -> CameraSource:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse source config {path}: {exc}") from exc
    return load_source(cfg, path.parent, marker_lookup)
