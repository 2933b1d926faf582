"""Merge a transformed subject over a generated background."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core import Channels, ImageBuffer, MaskedSubject, as_rgb
from .errors import DimensionMismatch, InvalidValue


@dataclass(frozen=True)
class CompositeOutput:
    image: ImageBuffer
    foreground_coverage: float


def blend(foreground: ImageBuffer, background: ImageBuffer) -> ImageBuffer:
    """Straight-alpha blend of an RGBA foreground over an RGB background.

    ``out = a*fg + (1-a)*bg`` with ``a = alpha/255``, rounded half-to-even.
    Pixels with alpha 0 copy the background without touching the foreground
    RGB; pixels with alpha 255 copy the foreground.
    """
    if foreground.channels is not Channels.RGBA8:
        raise InvalidValue("foreground must be RGBA8")
    if foreground.size != background.size:
        raise DimensionMismatch(f"foreground {foreground.size} vs background {background.size}")
    bg = as_rgb(background).pixels
    fg = foreground.pixels
    alpha = fg[..., 3]
    out = bg.copy()
    opaque = alpha == 255
    out[opaque] = fg[opaque, :3]
    partial = (alpha > 0) & ~opaque
    if partial.any():
        a = alpha[partial].astype(np.int64)[:, None]
        num = a * fg[partial, :3].astype(np.int64) + (255 - a) * bg[partial].astype(np.int64)
        # num/255 is never exactly .5, so rint's tie rule never triggers
        out[partial] = np.rint(num / 255.0).astype(np.uint8)
    return ImageBuffer(out)


def merge(foreground: MaskedSubject, background: ImageBuffer) -> CompositeOutput:
    image = blend(foreground.cutout, background)
    alpha = foreground.cutout.pixels[..., 3]
    coverage = float(np.count_nonzero(alpha)) / alpha.size
    return CompositeOutput(image, coverage)


def _crop_to_aspect(px: np.ndarray, width: int, height: int) -> np.ndarray:
    h, w = px.shape[:2]
    # compare w/h against width/height without floats
    if w * height > width * h:
        new_w = max(1, round(h * width / height))
        x0 = (w - new_w) // 2
        return px[:, x0 : x0 + new_w]
    if w * height < width * h:
        new_h = max(1, round(w * height / width))
        y0 = (h - new_h) // 2
        return px[y0 : y0 + new_h]
    return px


def _resize_axis(px: np.ndarray, new_len: int, axis: int) -> np.ndarray:
    old_len = px.shape[axis]
    if old_len == new_len:
        return px
    pos = (np.arange(new_len) + 0.5) * (old_len / new_len) - 0.5
    pos = np.clip(pos, 0.0, old_len - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, old_len - 1)
    frac = pos - lo
    shape = [1] * px.ndim
    shape[axis] = new_len
    frac = frac.reshape(shape)
    return np.take(px, lo, axis=axis) * (1.0 - frac) + np.take(px, hi, axis=axis) * frac


def resize_background(background: ImageBuffer, target: Tuple[int, int]) -> ImageBuffer:
    """Center-crop ``background`` to the target aspect ratio, then bilinear-resize."""
    width, height = target
    if width < 1 or height < 1:
        raise InvalidValue("target must be at least 1x1")
    if background.size == (width, height):
        return background
    px = _crop_to_aspect(background.pixels, width, height).astype(np.float64)
    px = _resize_axis(px, height, 0)
    px = _resize_axis(px, width, 1)
    return ImageBuffer(np.clip(np.rint(px), 0, 255).astype(np.uint8))
