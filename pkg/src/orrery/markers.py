"""Fiducial marker base and detector.

Markers are 6x6-cell square fiducials: a one-cell black border around a 4x4
binary code (white = 1). Detection binarizes the coarsest pyramid level,
extracts dark 4-connected components, picks quad corners on their convex
hulls, refines the corners to sub-pixel on level 0 by fitting the border
edges in the gray image, decodes the code under 4 rotations against every
active marker base, and recovers the marker->camera pose from the
plane-to-pixel homography of the decoded corners.

Marker local frame: the marker lies in its Y=0 plane with corners at
(+-size/2, 0, +-size/2); code cell columns run along +X, rows along +Z, so
the decoded top-left corner is (-size/2, 0, -size/2).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import (
    DegenerateGeometryError,
    FrameFormatError,
    MarkerBaseError,
    RotationAmbiguityError,
)
from .frames import Frame, FramePyramid, PixelFormat, level_to_base_coords
from .geometry import Intrinsics, Pose, pose_from_homography, solve_homography

GRID = 4                     # interior code cells per side
CELLS = GRID + 2             # including the border ring
DEFAULT_THRESHOLD = 128
DECODE_MARGIN = 64           # gray levels for a confidently classified cell
MIN_COMPONENT_AREA = 64      # px, at the level find_quads runs on
MIN_QUAD_HULL_RATIO = 0.8
MIN_CORNER_ANGLE_DEG = 30.0
_CANON_CELL = 8              # canonical warp resolution per cell

# Plane frame (p, q, normal) -> marker frame (X, Z, -Y), det +1.
PLANE_TO_MARKER = np.array([[1.0, 0.0, 0.0],
                            [0.0, 0.0, -1.0],
                            [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class MarkerSpec:
    """One registered fiducial: id, 16-bit row-major code, physical size."""

    id: int
    bits: Tuple[int, ...]
    size_m: float

    def __post_init__(self):
        if self.id < 0:
            raise MarkerBaseError("marker id must be non-negative")
        if len(self.bits) != GRID * GRID or any(b not in (0, 1) for b in self.bits):
            raise MarkerBaseError("bits must be 16 values of 0/1")
        if not self.size_m > 0:
            raise MarkerBaseError("size_m must be positive")
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))

    @classmethod
    def from_bit_string(cls, id: int, bits: str, size_m: float) -> "MarkerSpec":
        if len(bits) != GRID * GRID or set(bits) - {"0", "1"}:
            raise MarkerBaseError(f"marker {id}: bits must be 16 chars of 0/1")
        return cls(id, tuple(int(c) for c in bits), size_m)

    @property
    def bit_string(self) -> str:
        return "".join(str(b) for b in self.bits)

    def grid(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.uint8).reshape(GRID, GRID)


def _rot_cw(grid: np.ndarray, k: int) -> np.ndarray:
    """Rotate a code grid by k*90 degrees clockwise."""
    return np.rot90(grid, -k)


@dataclass(frozen=True)
class MarkerBase:
    """Named set of markers the tracker recognizes; may be (de)activated."""

    name: str
    markers: Tuple[MarkerSpec, ...]
    active: bool = True

    def __post_init__(self):
        if not self.name:
            raise MarkerBaseError("marker base needs a non-empty name")
        if not self.markers:
            raise MarkerBaseError("marker base needs at least one marker")
        ids = [m.id for m in self.markers]
        if len(set(ids)) != len(ids):
            raise MarkerBaseError(f"duplicate marker ids in base '{self.name}'")
        for i, a in enumerate(self.markers):
            for b in self.markers[i + 1:]:
                ga, gb = a.grid(), b.grid()
                for k in range(4):
                    if np.array_equal(ga, _rot_cw(gb, k)):
                        raise RotationAmbiguityError(
                            f"markers {a.id} and {b.id} are rotations of each other")
        object.__setattr__(self, "markers", tuple(self.markers))


def load_marker_base(path) -> MarkerBase:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MarkerBaseError(f"cannot parse marker base {path}: {exc}") from exc
    if not isinstance(doc, dict) or "markers" not in doc:
        raise MarkerBaseError(f"{path}: expected an object with a 'markers' list")
    specs = []
    for entry in doc["markers"]:
        try:
            specs.append(MarkerSpec.from_bit_string(
                int(entry["id"]), str(entry["bits"]), float(entry["size_m"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise MarkerBaseError(f"{path}: bad marker entry {entry!r}: {exc}") from exc
    return MarkerBase(name=str(doc.get("name", "")),
                      markers=tuple(specs),
                      active=bool(doc.get("active", True)))


def set_active(base: MarkerBase, active: bool) -> MarkerBase:
    return replace(base, active=active)


def cell_grid(spec: MarkerSpec) -> np.ndarray:
    """6x6 gray values of the marker: black border, code interior."""
    g = np.zeros((CELLS, CELLS), dtype=np.uint8)
    g[1:-1, 1:-1] = spec.grid() * 255
    return g


def render_marker(spec: MarkerSpec, side_px: int) -> Frame:
    """Rasterize a marker to a GRAY8 frame; side must be >= 48 and divisible
    by 6 so cells stay integral."""
    if side_px < 48 or side_px % CELLS != 0:
        raise ValueError("side_px must be >= 48 and divisible by 6")
    cell = side_px // CELLS
    img = np.kron(cell_grid(spec), np.ones((cell, cell), dtype=np.uint8))
    return Frame(side_px, side_px, PixelFormat.GRAY8, img)


def binarize(frame: Frame, threshold: int = DEFAULT_THRESHOLD) -> Frame:
    """pixel < threshold -> 0, else 255."""
    if frame.format is not PixelFormat.GRAY8:
        raise FrameFormatError("binarize expects a GRAY8 frame")
    if not 0 <= threshold <= 255:
        raise ValueError("threshold must be in 0..255")
    out = np.where(frame.pixels < threshold, 0, 255).astype(np.uint8)
    return Frame(frame.width, frame.height, PixelFormat.GRAY8, out,
                 seq=frame.seq, t=frame.t)


def adaptive_threshold(frame: Frame) -> int:
    """Mean of the frame minus 16, clipped to a usable range."""
    return int(np.clip(int(frame.pixels.mean()) - 16, 1, 255))


# --- quad candidates ---


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull of integer (x, y) points, clockwise on screen."""
    pts = np.unique(points, axis=0)
    if len(pts) <= 2:
        return pts.astype(np.float64)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: List[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: List[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64)


def _polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _four_extremes(hull: np.ndarray) -> np.ndarray:
    """Pick 4 hull vertices as quad corners, kept in hull order.

    Seeded by farthest-point selection, then each corner is hill-climbed
    over the hull vertices to maximize the quad area: pure min-distance
    selection degrades on strongly foreshortened markers, picking edge
    midpoints instead of the short-side corners.
    """
    n = len(hull)
    centroid = hull.mean(axis=0)
    chosen = [int(np.argmax(((hull - centroid) ** 2).sum(axis=1)))]
    for _ in range(3):
        d = ((hull[:, None, :] - hull[chosen][None, :, :]) ** 2).sum(axis=2).min(axis=1)
        chosen.append(int(np.argmax(d)))
    chosen = sorted(set(chosen))
    while len(chosen) < 4:  # degenerate seed; pad with unused vertices
        chosen.append(next(i for i in range(n) if i not in chosen))
        chosen = sorted(set(chosen))
    for _ in range(4):
        improved = False
        for slot in range(4):
            others = [chosen[j] for j in range(4) if j != slot]
            best_i, best_area = chosen[slot], _polygon_area(hull[sorted(chosen)])
            for i in range(n):
                if i in others:
                    continue
                area = _polygon_area(hull[sorted(others + [i])])
                if area > best_area + 1e-12:
                    best_i, best_area = i, area
            if best_i != chosen[slot]:
                chosen[slot] = best_i
                chosen = sorted(chosen)
                improved = True
        if not improved:
            break
    return hull[sorted(chosen)]


def _quad_is_convex(quad: np.ndarray) -> bool:
    signs = []
    for i in range(4):
        a = quad[(i + 1) % 4] - quad[i]
        b = quad[(i + 2) % 4] - quad[(i + 1) % 4]
        c = a[0] * b[1] - a[1] * b[0]
        if c == 0.0:
            return False
        signs.append(c > 0.0)
    return all(signs) or not any(signs)


def _min_corner_angle(quad: np.ndarray) -> float:
    worst = np.pi
    for i in range(4):
        a = quad[(i - 1) % 4] - quad[i]
        b = quad[(i + 1) % 4] - quad[i]
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            return 0.0
        cosv = np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0)
        worst = min(worst, float(np.arccos(cosv)))
    return worst


def _start_at_topmost_left(quad: np.ndarray) -> np.ndarray:
    start = int(np.lexsort((quad[:, 0], quad[:, 1]))[0])
    return np.roll(quad, -start, axis=0)


def find_quads(binary: Frame) -> List[np.ndarray]:
    """Quad candidates in a binarized frame.

    Each dark 4-connected component with area >= 64 px contributes its
    convex hull; 4 corners are chosen by farthest-point selection and the
    candidate is kept only if it is convex, covers >= 80% of the hull area
    and has no corner angle below 30 degrees. Corners are returned clockwise
    starting at the topmost-left one.
    """
    if binary.format is not PixelFormat.GRAY8:
        raise FrameFormatError("find_quads expects a GRAY8 frame")
    dark = binary.pixels < DEFAULT_THRESHOLD
    labels, count = ndimage.label(dark, structure=np.array([[0, 1, 0],
                                                            [1, 1, 1],
                                                            [0, 1, 0]]))
    if count == 0:
        return []
    areas = np.bincount(labels.ravel())
    quads: List[np.ndarray] = []
    for comp_id, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None or areas[comp_id] < MIN_COMPONENT_AREA:
            continue
        ys, xs = np.nonzero(labels[sl] == comp_id)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        # hull vertices can only be at per-row x extremes
        order = np.lexsort((xs, ys))
        ys_s, xs_s = ys[order], xs[order]
        rows, first = np.unique(ys_s, return_index=True)
        last = np.r_[first[1:], len(ys_s)] - 1
        pts = np.column_stack([
            np.r_[xs_s[first], xs_s[last]],
            np.r_[rows, rows],
        ])
        hull = _convex_hull(pts)
        if len(hull) < 4:
            continue
        hull_area = _polygon_area(hull)
        if hull_area <= 0.0:
            continue
        quad = _four_extremes(hull)
        if len(quad) < 4 or not _quad_is_convex(quad):
            continue
        if _polygon_area(quad) < MIN_QUAD_HULL_RATIO * hull_area:
            continue
        if _min_corner_angle(quad) < np.radians(MIN_CORNER_ANGLE_DEG):
            continue
        quads.append(_start_at_topmost_left(quad))
    return quads


# --- sub-pixel refinement ---


def _bilinear(px: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = px.shape
    x0 = np.clip(np.floor(xs), 0, w - 2).astype(np.intp)
    y0 = np.clip(np.floor(ys), 0, h - 2).astype(np.intp)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    p00 = px[y0, x0]
    p01 = px[y0, x0 + 1]
    p10 = px[y0 + 1, x0]
    p11 = px[y0 + 1, x0 + 1]
    return (1 - fy) * ((1 - fx) * p00 + fx * p01) + fy * ((1 - fx) * p10 + fx * p11)


def _fit_line(pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - mean, full_matrices=False)
    return mean, vt[0]


def _intersect_lines(p1, d1, p2, d2) -> Optional[np.ndarray]:
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(denom) < 1e-12:
        return None
    t = ((p2[0] - p1[0]) * d2[1] - (p2[1] - p1[1]) * d2[0]) / denom
    return p1 + t * d1


def refine_quad(gray: Frame, quad: np.ndarray, max_shift: float,
                threshold: int = DEFAULT_THRESHOLD) -> np.ndarray:
    """Snap quad corners to sub-pixel edge-line intersections.

    Two passes: for each edge, gray values are sampled along outward normals
    within the search window; the dark-to-light 50%-rise crossing nearest
    the current edge gives a sub-pixel boundary point, a total-least-squares
    line through those points replaces the edge, and corners become line
    intersections. Edges without enough crossings keep their corners.
    """
    refined = _refine_quad_once(gray, quad, max(max_shift, 6.0), threshold)
    return _refine_quad_once(gray, refined, 3.0, threshold)


def _refine_quad_once(gray: Frame, quad: np.ndarray, max_shift: float,
                      threshold: int) -> np.ndarray:
    px = gray.pixels.astype(np.float64)
    centroid = quad.mean(axis=0)
    edge_lines: List[Optional[Tuple[np.ndarray, np.ndarray]]] = []
    min_edge = min(float(np.linalg.norm(quad[(i + 1) % 4] - quad[i])) for i in range(4))
    reach = float(np.clip(max_shift, 2.0, max(2.0, min_edge / 5.0)))
    offsets = np.arange(-reach, reach + 0.25, 0.5)
    for i in range(4):
        a, b = quad[i], quad[(i + 1) % 4]
        length = float(np.linalg.norm(b - a))
        n_samples = int(np.clip(length * 0.5, 8, 40))
        u = np.linspace(0.12, 0.88, n_samples)
        base = a[None, :] + u[:, None] * (b - a)[None, :]
        normal = np.array([-(b - a)[1], (b - a)[0]]) / length
        if np.dot(normal, base.mean(axis=0) - centroid) < 0:
            normal = -normal
        pts = base[:, None, :] + offsets[None, :, None] * normal[None, None, :]
        vals = _bilinear(px, pts[:, :, 0], pts[:, :, 1])
        rising = (vals[:, :-1] < threshold) & (vals[:, 1:] >= threshold)
        last = vals.shape[1] - 1
        boundary = []
        for j in range(n_samples):
            idx = np.nonzero(rising[j])[0]
            if idx.size == 0:
                continue
            k = int(idx[np.argmin(np.abs(offsets[idx]))])
            # 50%-rise point between the local plateaus; unbiased w.r.t. the
            # actual foreground/background gray levels
            mid = 0.5 * (vals[j, max(k - 2, 0)] + vals[j, min(k + 3, last)])
            s = None
            for i in (k, max(k - 1, 0), min(k + 1, last - 1)):
                v0, v1 = vals[j, i], vals[j, i + 1]
                if v0 != v1 and min(v0, v1) <= mid <= max(v0, v1):
                    frac = np.clip((mid - v0) / (v1 - v0), 0.0, 1.0)
                    s = offsets[i] + frac * 0.5
                    break
            if s is None:
                v0, v1 = vals[j, k], vals[j, k + 1]
                s = offsets[k] + (threshold - v0) / (v1 - v0) * 0.5
            boundary.append(base[j] + s * normal)
        edge_lines.append(_fit_line(np.array(boundary)) if len(boundary) >= 5 else None)
    refined = quad.copy()
    for i in range(4):
        before, after = edge_lines[(i - 1) % 4], edge_lines[i]
        if before is None or after is None:
            continue
        p = _intersect_lines(before[0], before[1], after[0], after[1])
        # sampling stays inside the window; the intersection may drift a bit
        # further along the edges when the coarse pick sat off the corner
        if p is None or np.linalg.norm(p - quad[i]) > 1.5 * max_shift + reach:
            continue
        refined[i] = p
    return refined


# --- decoding ---


def _sample_cells(gray: Frame, quad: np.ndarray, threshold: int) -> Tuple[np.ndarray, np.ndarray]:
    """Mean gray of a 3x3 probe at each of the 6x6 cell centers."""
    side = CELLS * _CANON_CELL
    canon_corners = np.array([[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]])
    h = solve_homography(canon_corners, quad)
    centers = (np.arange(CELLS) + 0.5) * _CANON_CELL
    cx, cy = np.meshgrid(centers, centers)
    d = np.array([-1.0, 0.0, 1.0])
    dx, dy = np.meshgrid(d, d)
    xs = cx[:, :, None] + dx.ravel()[None, None, :]
    ys = cy[:, :, None] + dy.ravel()[None, None, :]
    ones = np.ones_like(xs)
    pts = np.stack([xs, ys, ones], axis=-1) @ h.T
    ix = np.clip(np.floor(pts[..., 0] / pts[..., 2] + 0.5), 0, gray.width - 1).astype(np.intp)
    iy = np.clip(np.floor(pts[..., 1] / pts[..., 2] + 0.5), 0, gray.height - 1).astype(np.intp)
    means = gray.pixels[iy, ix].astype(np.float64).mean(axis=2)
    return means < threshold, np.abs(means - threshold)


def decode(gray: Frame, quad: np.ndarray, base: MarkerBase | Sequence[MarkerSpec],
           threshold: int = DEFAULT_THRESHOLD):
    """Decode a quad against a marker base.

    Returns (spec, rotation k in 0..3, confidence) for a unique match, where
    k counts 90-degree clockwise rotations of the marker in the image and
    ``quad[k]`` is the marker's physical top-left corner. Returns None when
    the border is not dark, the code matches no active spec, or the match is
    ambiguous. Confidence is the fraction of the 36 cells classified with a
    margin of at least 64 gray levels.
    """
    if isinstance(base, MarkerBase):
        specs: Sequence[MarkerSpec] = base.markers if base.active else ()
    else:
        specs = base
    if not specs:
        return None
    dark, margins = _sample_cells(gray, np.asarray(quad, dtype=np.float64), threshold)
    border = np.ones((CELLS, CELLS), dtype=bool)
    border[1:-1, 1:-1] = False
    if not np.all(dark[border]):
        return None
    read = (~dark[1:-1, 1:-1]).astype(np.uint8)  # white cell = bit 1
    matches = []
    for spec in specs:
        g = spec.grid()
        for k in range(4):
            if np.array_equal(read, _rot_cw(g, k)):
                matches.append((spec, k))
                break
    if len(matches) != 1:
        return None
    spec, k = matches[0]
    confidence = float(np.count_nonzero(margins >= DECODE_MARGIN)) / (CELLS * CELLS)
    return spec, k, confidence


# --- detection ---


@dataclass(frozen=True)
class Detection:
    """One detected marker: sub-pixel corners (clockwise from the decoded
    top-left), the meters->pixels homography, and the marker->camera pose."""

    marker_id: int
    corners_px: np.ndarray
    homography: np.ndarray
    pose: Pose
    confidence: float

    def __post_init__(self):
        corners = np.asarray(self.corners_px, dtype=np.float64)
        if corners.shape != (4, 2) or not _quad_is_convex(corners):
            raise ValueError("detection corners must form a convex quad")
        corners.setflags(write=False)
        h = np.asarray(self.homography, dtype=np.float64)
        h.setflags(write=False)
        object.__setattr__(self, "corners_px", corners)
        object.__setattr__(self, "homography", h)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")


def marker_corners_plan(size_m: float) -> np.ndarray:
    """Marker corners in plan (X, Z) coordinates, decoded order TL,TR,BR,BL."""
    h = size_m / 2.0
    return np.array([[-h, -h], [h, -h], [h, h], [-h, h]])


def marker_corners_3d(size_m: float) -> np.ndarray:
    plan = marker_corners_plan(size_m)
    return np.column_stack([plan[:, 0], np.zeros(4), plan[:, 1]])


def detect(pyramid: FramePyramid, bases: Sequence[MarkerBase], K: Intrinsics,
           threshold: int = DEFAULT_THRESHOLD, adaptive: bool = False) -> List[Detection]:
    """Detect all registered markers in a frame pyramid.

    Quad candidates come from the coarsest level; corners are refined on
    level 0 within a +-2*2^levels px window, decoded, and turned into poses
    via the plan-coordinate homography. Detections are sorted by marker id.
    """
    specs = [s for b in bases if b.active for s in b.markers]
    if not specs:
        return []
    levels = len(pyramid.levels)
    coarse = pyramid.coarsest
    base_level = pyramid.levels[0]
    thr_coarse = adaptive_threshold(coarse) if adaptive else threshold
    thr_base = adaptive_threshold(base_level) if adaptive else threshold
    window = 2.0 * (2 ** levels)
    detections: List[Detection] = []
    for quad_c in find_quads(binarize(coarse, thr_coarse)):
        quad0 = level_to_base_coords(quad_c, levels - 1)
        quad = refine_quad(base_level, quad0, window, thr_base)
        decoded = decode(base_level, quad, specs, thr_base)
        if decoded is None:
            continue
        spec, k, confidence = decoded
        corners = np.roll(quad, -k, axis=0)
        try:
            h = solve_homography(marker_corners_plan(spec.size_m), corners)
            plane_pose = pose_from_homography(h, K)
        except DegenerateGeometryError:
            continue
        pose = Pose(plane_pose.rotation @ PLANE_TO_MARKER.T, plane_pose.translation)
        detections.append(Detection(spec.id, corners, h, pose, confidence))
    detections.sort(key=lambda d: d.marker_id)
    return detections
