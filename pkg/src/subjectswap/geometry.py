"""Flip / rotate / scale of an RGBA subject cutout.

Coordinates are continuous image coordinates with x to the right and y
downward; pixel ``(i, j)`` has its center at ``(i + 0.5, j + 0.5)``.
Matrices are the 2x3 forward map ``x' = a*x + b*y + c``, ``y' = d*x + e*y + f``.
A positive angle turns +x toward +y, which appears clockwise on screen.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .core import ImageBuffer, MaskedSubject, SubjectMask, mask_extent, tight_bbox
from .errors import InvalidValue, SubjectVanishes

MAX_SCALE = 4.0
_SNAP = 1e-9


class Flip(enum.Enum):
    NONE = "none"
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass(frozen=True)
class AffineParams:
    flip: Flip = Flip.NONE
    rotation_deg: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "flip", Flip(self.flip))
        if not -180.0 <= self.rotation_deg < 180.0:
            raise InvalidValue(f"rotation {self.rotation_deg} outside [-180, 180)")
        if not 0.0 < self.scale <= MAX_SCALE:
            raise InvalidValue(f"scale {self.scale} outside (0, {MAX_SCALE}]")

    def to_dict(self) -> dict:
        return {"flip": self.flip.value, "rotation_deg": self.rotation_deg, "scale": self.scale}


IDENTITY = AffineParams()


@dataclass(frozen=True)
class AffineMatrix:
    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    def __post_init__(self):
        if abs(self.a * self.e - self.b * self.d) < 1e-12:
            raise InvalidValue("affine matrix is singular")

    @classmethod
    def from_array(cls, m: np.ndarray) -> "AffineMatrix":
        return cls(*(float(v) for v in np.asarray(m)[:2, :3].ravel()))

    def to_array(self) -> np.ndarray:
        return np.array([[self.a, self.b, self.c], [self.d, self.e, self.f], [0.0, 0.0, 1.0]])

    def as_tuple(self) -> Tuple[float, ...]:
        return (self.a, self.b, self.c, self.d, self.e, self.f)

    def __matmul__(self, other: "AffineMatrix") -> "AffineMatrix":
        return AffineMatrix.from_array(self.to_array() @ other.to_array())

    def apply(self, x: float, y: float) -> Tuple[float, float]:
        return self.a * x + self.b * y + self.c, self.d * x + self.e * y + self.f


@dataclass(frozen=True)
class AffineRanges:
    """Sampling ranges for random subject transforms."""

    theta: Tuple[float, float] = (-25.0, 25.0)
    scale: Tuple[float, float] = (0.7, 1.3)
    allow_vflip: bool = False
    translate: bool = False

    def __post_init__(self):
        lo, hi = self.theta
        if not -180.0 <= lo <= hi < 180.0:
            raise InvalidValue(f"theta range {self.theta} must lie in [-180, 180)")
        lo, hi = self.scale
        if not 0.0 < lo <= hi <= MAX_SCALE:
            raise InvalidValue(f"scale range {self.scale} must lie in (0, {MAX_SCALE}]")

    def sample(self, rng: np.random.Generator) -> AffineParams:
        flips = [Flip.NONE, Flip.HORIZONTAL] + ([Flip.VERTICAL] if self.allow_vflip else [])
        flip = flips[int(rng.integers(len(flips)))]
        theta = float(rng.uniform(*self.theta)) if self.theta[0] < self.theta[1] else self.theta[0]
        scale = float(rng.uniform(*self.scale)) if self.scale[0] < self.scale[1] else self.scale[0]
        return AffineParams(flip, theta, scale)


def _translate(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def _rotation(theta_deg: float) -> np.ndarray:
    # exact values at multiples of 90 degrees keep flips/quarter turns lossless
    quarter = theta_deg / 90.0
    if quarter == round(quarter):
        cos, sin = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][int(round(quarter)) % 4]
    else:
        t = math.radians(theta_deg)
        cos, sin = math.cos(t), math.sin(t)
    return np.array([[cos, -sin, 0.0], [sin, cos, 0.0], [0.0, 0.0, 1.0]])


def _flip(flip: Flip) -> np.ndarray:
    sx = -1.0 if flip is Flip.HORIZONTAL else 1.0
    sy = -1.0 if flip is Flip.VERTICAL else 1.0
    return np.diag([sx, sy, 1.0])


def _linear(params: AffineParams) -> np.ndarray:
    s = params.scale
    return _rotation(params.rotation_deg) @ np.diag([s, s, 1.0]) @ _flip(params.flip)


def _inverse_linear(params: AffineParams) -> np.ndarray:
    s = 1.0 / params.scale
    return _flip(params.flip) @ np.diag([s, s, 1.0]) @ _rotation(-params.rotation_deg)


def to_matrix(
    params: AffineParams, center: Tuple[float, float], dest_center: Optional[Tuple[float, float]] = None
) -> AffineMatrix:
    """Forward map ``translate(dest) . rotate . scale . flip . translate(-center)``.

    ``dest_center`` defaults to ``center``, i.e. the subject stays in place.
    """
    cx, cy = center
    dx, dy = dest_center if dest_center is not None else center
    m = _translate(dx, dy) @ _linear(params) @ _translate(-cx, -cy)
    return AffineMatrix.from_array(m)


def _inverse_matrix(params: AffineParams, center, dest_center) -> np.ndarray:
    cx, cy = center
    dx, dy = dest_center
    return _translate(cx, cy) @ _inverse_linear(params) @ _translate(-dx, -dy)


def _box_offsets(params: AffineParams, corners: np.ndarray) -> Tuple[float, float, float, float]:
    """Extent (min_x, min_y, max_x, max_y) of pivot-relative box corners under the unit-scale map."""
    lin = _linear(replace(params, scale=1.0))[:2, :2]
    moved = corners @ lin.T
    return moved[:, 0].min(), moved[:, 1].min(), moved[:, 0].max(), moved[:, 1].max()


def _fit_scale(params: AffineParams, offsets, dest, canvas) -> float:
    """Largest scale <= params.scale keeping the transformed subject box inside the canvas."""
    min_x, min_y, max_x, max_y = offsets
    dx, dy = dest
    width, height = canvas
    limits = []
    for lo, hi, d, size in ((min_x, max_x, dx, width), (min_y, max_y, dy, height)):
        if hi > 0:
            limits.append((size - d) / hi)
        if lo < 0:
            limits.append(d / -lo)
    s_max = max(0.0, min(limits)) if limits else params.scale
    if params.scale <= s_max * (1.0 + 1e-12):
        return params.scale
    return s_max


def _bilinear(src: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sample ``src`` (H, W, C) at fractional pixel indices; outside reads as zero."""
    h, w = src.shape[:2]
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    fu = (u - i0)[..., None]
    fv = (v - j0)[..., None]
    out = np.zeros(u.shape + (src.shape[2],), dtype=np.float64)
    for di, dj, wgt in (
        (0, 0, (1.0 - fu) * (1.0 - fv)),
        (1, 0, fu * (1.0 - fv)),
        (0, 1, (1.0 - fu) * fv),
        (1, 1, fu * fv),
    ):
        ii = i0 + di
        jj = j0 + dj
        ok = (ii >= 0) & (ii < w) & (jj >= 0) & (jj < h)
        vals = np.zeros_like(out)
        vals[ok] = src[jj[ok], ii[ok]]
        out += wgt * vals
    return out


def _snap(x: np.ndarray) -> np.ndarray:
    r = np.rint(x)
    return np.where(np.abs(x - r) < _SNAP, r, x)


def warp_rgba(rgba: np.ndarray, inverse: np.ndarray, canvas: Tuple[int, int]) -> np.ndarray:
    """Resample a straight-alpha RGBA array onto ``canvas`` under an inverse map.

    Colour is interpolated premultiplied so transparent (zero) neighbours do
    not darken edges. Output is canonical: RGB is zero where alpha rounds to 0.
    """
    width, height = canvas
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    xs += 0.5
    ys += 0.5
    u = _snap(inverse[0, 0] * xs + inverse[0, 1] * ys + inverse[0, 2] - 0.5)
    v = _snap(inverse[1, 0] * xs + inverse[1, 1] * ys + inverse[1, 2] - 0.5)
    src = rgba.astype(np.float64)
    alpha = src[..., 3:4]
    prem = np.concatenate([src[..., :3] * alpha / 255.0, alpha], axis=2)
    sampled = _bilinear(prem, u, v)
    a = sampled[..., 3]
    alpha8 = np.clip(np.rint(a), 0, 255).astype(np.uint8)
    out = np.zeros((height, width, 4), dtype=np.uint8)
    vis = alpha8 > 0
    rgb = sampled[vis, :3] * 255.0 / a[vis, None]
    out[vis, :3] = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    out[..., 3] = alpha8
    return out


class AffineResult(NamedTuple):
    subject: MaskedSubject
    effective: AffineParams
    offset: Tuple[int, int]


def apply_affine(
    subject: MaskedSubject,
    params: AffineParams,
    canvas: Tuple[int, int],
    seed: int = 0,
    translate: bool = False,
) -> AffineResult:
    """Flip, rotate and scale ``subject`` about its pivot onto a ``canvas`` (w, h).

    The pivot keeps its normalized position unless ``translate`` is set, in
    which case an integer offset keeping the subject inside the canvas is
    drawn from ``seed``. A scale that would push the transformed subject box
    past the canvas edge is reduced to the largest fitting value and
    reported in ``effective``. The result's pivot is the transformed pivot.
    """
    width, height = canvas
    if width < 1 or height < 1:
        raise InvalidValue("canvas must be at least 1x1")
    x0, y0, x1, y1 = mask_extent(subject.mask.bits)
    center = subject.pivot
    if (width, height) == (subject.width, subject.height):
        dest = center
    else:
        dest = (center[0] * width / subject.width, center[1] * height / subject.height)
    corners = np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]], dtype=np.float64) - np.asarray(center)
    offsets = _box_offsets(params, corners)
    effective = replace(params, scale=_fit_scale(params, offsets, dest, canvas))
    if effective.scale <= 0.0:
        raise SubjectVanishes("pivot lies on the canvas edge; no positive scale fits")

    offset = (0, 0)
    if translate:
        s = effective.scale
        min_x, min_y, max_x, max_y = (s * v for v in offsets)
        rng = np.random.default_rng(seed)
        lo_x, hi_x = math.ceil(-min_x - dest[0]), math.floor(width - max_x - dest[0])
        lo_y, hi_y = math.ceil(-min_y - dest[1]), math.floor(height - max_y - dest[1])
        ox = int(rng.integers(lo_x, hi_x + 1)) if hi_x >= lo_x else 0
        oy = int(rng.integers(lo_y, hi_y + 1)) if hi_y >= lo_y else 0
        offset = (ox, oy)
        dest = (dest[0] + ox, dest[1] + oy)

    inverse = _inverse_matrix(effective, center, dest)
    out = warp_rgba(subject.cutout.pixels, inverse, canvas)
    mass = out[..., 3].sum(dtype=np.float64) / 255.0
    bits = out[..., 3] > 0
    if mass < 1.0 or not bits.any():
        raise SubjectVanishes(f"transformed alpha mass {mass:.3f} < 1 pixel")
    mask = SubjectMask(bits)
    moved = MaskedSubject(ImageBuffer(out), mask, tight_bbox(mask), pivot=dest)
    return AffineResult(moved, effective, offset)
