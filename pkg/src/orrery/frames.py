"""Pixel buffers, format conversion, and the multi-resolution frame stack.

Frames are immutable value types backed by read-only numpy arrays:
RGBA8 frames have shape (height, width, 4), GRAY8 frames (height, width).
Grayscale conversion uses the BT.601 luma weights with round-half-up so the
whole pipeline is bit-exact and platform independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Tuple

import numpy as np

from .errors import FrameFormatError

# Camera frames and pyramid levels must stay at least this large.
MIN_PIPELINE_DIM = 8


class PixelFormat(Enum):
    RGBA8 = "rgba8"
    GRAY8 = "gray8"


_CHANNELS = {PixelFormat.RGBA8: 4, PixelFormat.GRAY8: 1}


@dataclass(frozen=True)
class Frame:
    """One image: tightly packed row-major pixels plus capture metadata."""

    width: int
    height: int
    format: PixelFormat
    pixels: np.ndarray
    seq: int = 0
    t: float = 0.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise FrameFormatError("frame dimensions must be positive")
        expected = (self.height, self.width, 4) if self.format is PixelFormat.RGBA8 \
            else (self.height, self.width)
        arr = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if arr.shape != expected:
            raise FrameFormatError(f"pixel buffer shape {arr.shape} != {expected}")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def bytes_per_pixel(self) -> int:
        return _CHANNELS[self.format]

    def with_seq_t(self, seq: int, t: float) -> "Frame":
        return replace(self, seq=seq, t=t)


def solid_frame(width: int, height: int, rgba, seq: int = 0, t: float = 0.0) -> Frame:
    """Uniform RGBA8 frame in the given color."""
    px = np.empty((height, width, 4), dtype=np.uint8)
    px[:] = np.asarray(rgba, dtype=np.uint8)
    return Frame(width, height, PixelFormat.RGBA8, px, seq=seq, t=t)


def to_gray(frame: Frame) -> Frame:
    """BT.601 luma conversion: y = round(0.299 R + 0.587 G + 0.114 B),
    round-half-up, alpha ignored."""
    if frame.format is not PixelFormat.RGBA8:
        raise FrameFormatError("to_gray expects an RGBA8 frame")
    rgb = frame.pixels[:, :, :3].astype(np.float64)
    y = np.floor(0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2] + 0.5)
    return Frame(frame.width, frame.height, PixelFormat.GRAY8,
                 y.astype(np.uint8), seq=frame.seq, t=frame.t)


def downsample(frame: Frame) -> Frame:
    """Halve a GRAY8 frame: each output pixel is the round-half-up mean of
    its 2x2 source block; an odd trailing row/column is dropped."""
    if frame.format is not PixelFormat.GRAY8:
        raise FrameFormatError("downsample expects a GRAY8 frame")
    if frame.width < 2 or frame.height < 2:
        raise FrameFormatError("frame too small to downsample")
    w, h = frame.width // 2, frame.height // 2
    p = frame.pixels[: 2 * h, : 2 * w].astype(np.uint16)
    total = p[0::2, 0::2] + p[0::2, 1::2] + p[1::2, 0::2] + p[1::2, 1::2]
    out = ((total + 2) // 4).astype(np.uint8)
    return Frame(w, h, PixelFormat.GRAY8, out, seq=frame.seq, t=frame.t)


@dataclass(frozen=True)
class FramePyramid:
    """Stack of GRAY8 frames; level i+1 has floor-halved dimensions of level i."""

    levels: Tuple[Frame, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.levels:
            raise FrameFormatError("pyramid needs at least one level")
        for lvl in self.levels:
            if lvl.format is not PixelFormat.GRAY8:
                raise FrameFormatError("pyramid levels must be GRAY8")
            if lvl.seq != self.levels[0].seq or lvl.t != self.levels[0].t:
                raise FrameFormatError("pyramid levels must share seq and t")
        for a, b in zip(self.levels, self.levels[1:]):
            if (b.width, b.height) != (a.width // 2, a.height // 2):
                raise FrameFormatError("pyramid levels must halve dimensions")
        object.__setattr__(self, "levels", tuple(self.levels))

    @property
    def seq(self) -> int:
        return self.levels[0].seq

    @property
    def t(self) -> float:
        return self.levels[0].t

    @property
    def coarsest(self) -> Frame:
        return self.levels[-1]


def build_pyramid(frame: Frame, levels: int) -> FramePyramid:
    """Grayscale pyramid with the given level count.

    Level 0 is the gray version of the input (converted if RGBA8); each
    further level halves the previous one. The coarsest level must keep both
    dimensions >= 8 or the level count is rejected.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    w, h = frame.width, frame.height
    for _ in range(levels - 1):
        w, h = w // 2, h // 2
    if w < MIN_PIPELINE_DIM or h < MIN_PIPELINE_DIM:
        raise ValueError(
            f"{levels} levels would shrink {frame.width}x{frame.height} below "
            f"{MIN_PIPELINE_DIM}px")
    base = to_gray(frame) if frame.format is PixelFormat.RGBA8 else frame
    stack = [base]
    for _ in range(levels - 1):
        stack.append(downsample(stack[-1]))
    return FramePyramid(tuple(stack))


def level_to_base_coords(coords, level: int):
    """Map pixel coordinates at a pyramid level to level-0 continuous
    coordinates (pixel centers sit on the integer grid at every level)."""
    scale = float(1 << level)
    return np.asarray(coords, dtype=np.float64) * scale + (scale - 1.0) / 2.0
