"""Raster, geometry and labeling types shared by every stage.

Normalized coordinates follow the pixel-edge convention: pixel ``i`` of a
``W``-wide image spans ``[i/W, (i+1)/W)``, so a full-image box is exactly
``(0, 0, 1, 1)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DimensionMismatch, EmptyMask, InvalidValue


class Channels(enum.Enum):
    RGB8 = 3
    RGBA8 = 4

    @property
    def count(self) -> int:
        return self.value


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True, order="C")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """An immutable RGB8 or RGBA8 raster stored as an ``(H, W, C)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            raise InvalidValue(f"pixels must be uint8, got {px.dtype}")
        if px.ndim != 3 or px.shape[2] not in (3, 4):
            raise InvalidValue(f"pixels must have shape (H, W, 3|4), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidValue("width and height must be >= 1")
        object.__setattr__(self, "pixels", _frozen(px))

    @classmethod
    def from_bytes(cls, width: int, height: int, channels: Channels, data: bytes) -> "ImageBuffer":
        expected = width * height * channels.count
        if width < 1 or height < 1:
            raise InvalidValue("width and height must be >= 1")
        if len(data) != expected:
            raise InvalidValue(f"expected {expected} bytes, got {len(data)}")
        arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels.count)
        return cls(arr)

    @classmethod
    def filled(cls, width: int, height: int, color: Tuple[int, ...]) -> "ImageBuffer":
        arr = np.empty((height, width, len(color)), dtype=np.uint8)
        arr[...] = np.asarray(color, dtype=np.uint8)
        return cls(arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> Tuple[int, int]:
        return self.width, self.height

    @property
    def channels(self) -> Channels:
        return Channels(self.pixels.shape[2])

    @property
    def data(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"ImageBuffer({self.width}x{self.height}, {self.channels.name})"


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.x_min < self.x_max <= 1.0 and 0.0 <= self.y_min < self.y_max <= 1.0):
            raise InvalidValue(f"invalid normalized box {self.as_tuple()}")
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidValue(f"confidence {self.confidence} outside [0, 1]")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def to_pixels(self, width: int, height: int) -> Tuple[float, float, float, float]:
        """Return the box in continuous pixel-edge coordinates."""
        return (self.x_min * width, self.y_min * height, self.x_max * width, self.y_max * height)


@dataclass(frozen=True, eq=False)
class SubjectMask:
    """A non-empty boolean mask stored as an ``(H, W)`` array."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise InvalidValue(f"mask must be a non-empty 2-D array, got shape {bits.shape}")
        bits = bits.astype(bool, copy=False)
        if not bits.any():
            raise EmptyMask("mask has no set bits")
        object.__setattr__(self, "bits", _frozen(bits))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def popcount(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other):
        if not isinstance(other, SubjectMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True)
class ClassLabel:
    fine_name: str
    superclass: str

    def __post_init__(self):
        if not self.fine_name.strip() or not self.superclass.strip():
            raise InvalidValue("class label names must be non-empty")


@dataclass(frozen=True, eq=False)
class MaskedSubject:
    """An RGBA cutout in canonical form plus the mask it was derived from.

    Canonical form means RGB is zero wherever alpha is zero, and the mask
    equals ``alpha > 0``. ``pivot`` is the point (pixel coordinates) that
    rotation and scaling turn about; it defaults to the center of the mask's
    tight box and is carried through transforms so that inverse transforms
    undo each other.
    """

    cutout: ImageBuffer
    mask: SubjectMask
    source_box: BoundingBox
    pivot: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.cutout.channels is not Channels.RGBA8:
            raise InvalidValue("cutout must be RGBA8")
        if self.cutout.size != (self.mask.width, self.mask.height):
            raise DimensionMismatch(
                f"cutout {self.cutout.size} vs mask {(self.mask.width, self.mask.height)}"
            )
        px = self.cutout.pixels
        alpha = px[..., 3]
        if not np.array_equal(alpha > 0, self.mask.bits):
            raise InvalidValue("alpha channel disagrees with mask bits")
        if px[alpha == 0, :3].any():
            raise InvalidValue("cutout is not canonical: RGB non-zero where alpha is zero")
        if self.pivot is None:
            x0, y0, x1, y1 = mask_extent(self.mask.bits)
            object.__setattr__(self, "pivot", ((x0 + x1) / 2.0, (y0 + y1) / 2.0))
        else:
            object.__setattr__(self, "pivot", (float(self.pivot[0]), float(self.pivot[1])))

    @property
    def width(self) -> int:
        return self.cutout.width

    @property
    def height(self) -> int:
        return self.cutout.height


def mask_extent(bits: np.ndarray) -> Optional[Tuple[int, int, int, int]]:
    """Pixel-edge extent ``(x0, y0, x1, y1)`` of set bits, ``x1``/``y1`` exclusive."""
    rows = np.flatnonzero(bits.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(bits.any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


def tight_bbox(mask: SubjectMask) -> BoundingBox:
    """Smallest normalized box containing every set bit of ``mask``."""
    extent = mask_extent(mask.bits)
    if extent is None:
        raise EmptyMask("mask has no set bits")
    x0, y0, x1, y1 = extent
    w, h = mask.width, mask.height
    return BoundingBox(x0 / w, y0 / h, x1 / w, y1 / h, confidence=1.0)


def cutout_subject(image: ImageBuffer, mask: SubjectMask) -> MaskedSubject:
    """Cut the masked subject out of an RGB image as a canonical RGBA buffer."""
    if image.size != (mask.width, mask.height):
        raise DimensionMismatch(f"image {image.size} vs mask {(mask.width, mask.height)}")
    bits = mask.bits
    if not bits.any():
        raise EmptyMask("mask has no set bits")
    rgba = np.zeros((image.height, image.width, 4), dtype=np.uint8)
    rgba[bits, :3] = image.pixels[bits, :3]
    rgba[bits, 3] = 255
    return MaskedSubject(ImageBuffer(rgba), mask, tight_bbox(mask))


def mask_from_alpha(cutout: ImageBuffer) -> SubjectMask:
    return SubjectMask(cutout.pixels[..., 3] > 0)


def as_rgb(image: ImageBuffer) -> ImageBuffer:
    if image.channels is Channels.RGB8:
        return image
    return ImageBuffer(image.pixels[..., :3])
