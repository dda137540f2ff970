"""Exception types shared across the engine."""


class OrreryError(Exception):
    """Base class for all engine errors."""


class BehindCameraError(OrreryError, ValueError):
    """A point to be projected has camera-frame z <= 0."""


class OutOfFrameError(OrreryError, ValueError):
    """A pixel coordinate lies outside the image bounds."""


class DegenerateGeometryError(OrreryError, ValueError):
    """A geometric problem has no well-defined solution (rank-deficient
    correspondences, singular matrix, collinear points)."""


class FrameFormatError(OrreryError, ValueError):
    """A frame has the wrong pixel format or an invalid size for an operation."""


class ImageDecodeError(OrreryError, ValueError):
    """An image file could not be decoded."""


class SourceStoppedError(OrreryError, RuntimeError):
    """capture() was called on a camera source that is not started."""


class MarkerBaseError(OrreryError, ValueError):
    """A marker base file is malformed or violates base invariants."""


class RotationAmbiguityError(MarkerBaseError):
    """Two marker codes in one base are 90-degree rotations of each other."""


class GestureProtocolError(OrreryError, ValueError):
    """A touch event violates the down -> move* -> up protocol."""


class CatalogError(OrreryError, ValueError):
    """A body catalog is malformed (duplicate names, cycles, bad values)."""


class ConfigError(OrreryError, ValueError):
    """A session or source configuration is invalid."""
