import numpy as np
import pytest

from orrery.errors import FrameFormatError, ImageDecodeError
from orrery.frames import (
    Frame,
    FramePyramid,
    PixelFormat,
    build_pyramid,
    downsample,
    level_to_base_coords,
    solid_frame,
    to_gray,
)
from orrery.imgio import decode_ppm, encode_ppm, load_image


def gray_frame(arr, **kw):
    arr = np.asarray(arr, dtype=np.uint8)
    return Frame(arr.shape[1], arr.shape[0], PixelFormat.GRAY8, arr, **kw)


def test_frame_validates_buffer_shape():
    with pytest.raises(FrameFormatError):
        Frame(4, 4, PixelFormat.RGBA8, np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(FrameFormatError):
        Frame(0, 4, PixelFormat.GRAY8, np.zeros((4, 0), dtype=np.uint8))


def test_frame_pixels_are_read_only():
    f = solid_frame(8, 8, (1, 2, 3, 255))
    with pytest.raises(ValueError):
        f.pixels[0, 0, 0] = 9


def test_to_gray_white_and_black():
    f = solid_frame(4, 4, (255, 255, 255, 255))
    assert np.all(to_gray(f).pixels == 255)
    f = solid_frame(4, 4, (0, 0, 0, 0))
    assert np.all(to_gray(f).pixels == 0)


def test_to_gray_pure_red_rounds_half_up():
    # 0.299 * 255 = 76.245 -> 76
    f = solid_frame(2, 2, (255, 0, 0, 255))
    assert np.all(to_gray(f).pixels == 76)


def test_to_gray_half_rounds_up():
    # green 109: 0.587 * 109 = 63.983 -> 64; construct an exact .5 case:
    # R=50, G=100, B=150: 14.95 + 58.7 + 17.1 = 90.75 -> 91
    f = solid_frame(1, 1, (50, 100, 150, 255))
    assert to_gray(f).pixels[0, 0] == 91


def test_to_gray_wrong_format():
    with pytest.raises(FrameFormatError):
        to_gray(gray_frame(np.zeros((4, 4))))


def test_downsample_mean_rounds_half_up():
    f = gray_frame([[0, 0], [0, 4]])
    out = downsample(f)
    assert out.width == out.height == 1
    assert out.pixels[0, 0] == 1  # mean 1.0


def test_downsample_constant_is_constant():
    f = gray_frame(np.full((6, 8), 137))
    out = downsample(f)
    assert (out.width, out.height) == (4, 3)
    assert np.all(out.pixels == 137)


def test_downsample_drops_odd_trailing_row_col():
    arr = np.arange(9, dtype=np.uint8).reshape(3, 3)
    out = downsample(gray_frame(arr))
    expected = (int(arr[0, 0]) + int(arr[0, 1]) + int(arr[1, 0]) + int(arr[1, 1]) + 2) // 4
    assert out.pixels.shape == (1, 1)
    assert out.pixels[0, 0] == expected


def test_downsample_too_small():
    with pytest.raises(FrameFormatError):
        downsample(gray_frame(np.zeros((1, 4))))


def test_build_pyramid_dimensions():
    f = solid_frame(640, 480, (10, 20, 30, 255))
    pyr = build_pyramid(f, 3)
    dims = [(l.width, l.height) for l in pyr.levels]
    assert dims == [(640, 480), (320, 240), (160, 120)]
    assert pyr.seq == f.seq and pyr.t == f.t


def test_build_pyramid_single_level_is_gray_identity():
    g = gray_frame(np.arange(64, dtype=np.uint8).reshape(8, 8))
    pyr = build_pyramid(g, 1)
    assert len(pyr.levels) == 1
    assert np.array_equal(pyr.levels[0].pixels, g.pixels)


def test_build_pyramid_rejects_too_many_levels():
    f = solid_frame(640, 480, (0, 0, 0, 255))
    with pytest.raises(ValueError):
        build_pyramid(f, 8)
    with pytest.raises(ValueError):
        build_pyramid(f, 0)


def test_pyramid_gray_idempotent_level0():
    g = gray_frame(np.random.default_rng(0).integers(0, 256, size=(16, 16), dtype=np.uint8))
    pyr = build_pyramid(g, 2)
    assert np.array_equal(pyr.levels[0].pixels, g.pixels)


def test_pyramid_determinism():
    rng = np.random.default_rng(1)
    px = rng.integers(0, 256, size=(32, 32, 4), dtype=np.uint8)
    f1 = Frame(32, 32, PixelFormat.RGBA8, px)
    f2 = Frame(32, 32, PixelFormat.RGBA8, px.copy())
    p1 = build_pyramid(f1, 2)
    p2 = build_pyramid(f2, 2)
    for a, b in zip(p1.levels, p2.levels):
        assert np.array_equal(a.pixels, b.pixels)


def test_pyramid_validates_levels():
    a = gray_frame(np.zeros((8, 8)))
    b = gray_frame(np.zeros((8, 8)))
    with pytest.raises(FrameFormatError):
        FramePyramid((a, b))  # not halved
    with pytest.raises(FrameFormatError):
        FramePyramid(())


def test_level_to_base_coords():
    # level-1 pixel 0 covers level-0 pixels {0,1}: center 0.5
    assert level_to_base_coords(0, 1) == 0.5
    assert level_to_base_coords(3, 2) == 3 * 4 + 1.5


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    px = rng.integers(0, 256, size=(5, 7, 4), dtype=np.uint8)
    px[:, :, 3] = 255
    f = Frame(7, 5, PixelFormat.RGBA8, px)
    data = encode_ppm(f)
    back = decode_ppm(data)
    assert np.array_equal(back.pixels, px)
    p = tmp_path / "x.ppm"
    p.write_bytes(data)
    assert np.array_equal(load_image(p).pixels, px)


def test_ppm_1x1_white_bytes():
    f = solid_frame(1, 1, (255, 255, 255, 255))
    assert encode_ppm(f) == b"P6\n1 1\n255\n\xff\xff\xff"


def test_load_image_rejects_garbage(tmp_path):
    p = tmp_path / "bad.ppm"
    p.write_bytes(b"hello world")
    with pytest.raises(ImageDecodeError):
        load_image(p)
