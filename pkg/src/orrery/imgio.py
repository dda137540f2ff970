"""Deterministic image file encoding/decoding.

PPM (P6, maxval 255) is written and parsed directly. PNG is written by a
small fixed-parameter encoder (8-bit RGB, filter 0 on every scanline, zlib
level 6) so that identical frames always produce identical bytes; decoding
goes through Pillow.
"""

from __future__ import annotations

import io
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FrameFormatError, ImageDecodeError
from .frames import Frame, PixelFormat

PNG_ZLIB_LEVEL = 6
_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def encode_ppm(frame: Frame) -> bytes:
    """P6 bytes for an RGBA8 frame; the alpha channel is dropped."""
    if frame.format is not PixelFormat.RGBA8:
        raise FrameFormatError("PPM encoding expects an RGBA8 frame")
    header = f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii")
    return header + frame.pixels[:, :, :3].tobytes()


def decode_ppm(data: bytes) -> Frame:
    """Parse P6 bytes into an RGBA8 frame (alpha = 255)."""
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment line
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise ImageDecodeError("not a P6 PPM")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise ImageDecodeError("bad PPM header") from exc
    if maxval != 255:
        raise ImageDecodeError("only maxval 255 PPM is supported")
    pos += 1  # single whitespace after maxval
    raw = data[pos : pos + width * height * 3]
    if len(raw) != width * height * 3:
        raise ImageDecodeError("truncated PPM pixel data")
    rgb = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
    px = np.empty((height, width, 4), dtype=np.uint8)
    px[:, :, :3] = rgb
    px[:, :, 3] = 255
    return Frame(width, height, PixelFormat.RGBA8, px)


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    chunk = tag + payload
    return struct.pack(">I", len(payload)) + chunk + struct.pack(">I", zlib.crc32(chunk) & 0xFFFFFFFF)


def encode_png(frame: Frame) -> bytes:
    """Deterministic 8-bit RGB PNG (filter 0 everywhere, zlib level 6)."""
    if frame.format is not PixelFormat.RGBA8:
        raise FrameFormatError("PNG encoding expects an RGBA8 frame")
    rgb = frame.pixels[:, :, :3]
    raw = b"".join(b"\x00" + rgb[y].tobytes() for y in range(frame.height))
    ihdr = struct.pack(">IIBBBBB", frame.width, frame.height, 8, 2, 0, 0, 0)
    return (_PNG_MAGIC
            + _png_chunk(b"IHDR", ihdr)
            + _png_chunk(b"IDAT", zlib.compress(raw, PNG_ZLIB_LEVEL))
            + _png_chunk(b"IEND", b""))


def decode_png(data: bytes) -> Frame:
    """Decode PNG bytes via Pillow into an RGBA8 frame."""
    from PIL import Image

    try:
        img = Image.open(io.BytesIO(data))
        img = img.convert("RGBA")
    except Exception as exc:
        raise ImageDecodeError(f"cannot decode PNG: {exc}") from exc
    px = np.asarray(img, dtype=np.uint8)
    return Frame(img.width, img.height, PixelFormat.RGBA8, px)


def load_image(path) -> Frame:
    """Load a PNG or PPM(P6) file as an RGBA8 frame."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageDecodeError(f"cannot read {path}: {exc}") from exc
    if data[:2] == b"P6":
        return decode_ppm(data)
    if data[: len(_PNG_MAGIC)] == _PNG_MAGIC:
        return decode_png(data)
    raise ImageDecodeError(f"{path}: unsupported image format")
