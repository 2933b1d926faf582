"""Deterministic in-process stand-ins for the four model services.

Every mock is a pure function of its declared inputs, which is what makes
whole-pipeline runs byte-reproducible without any model weights.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Tuple

import numpy as np

from ..core import BoundingBox, ImageBuffer, SubjectMask
from ..errors import EmptyMaskReturned, InvalidValue
from ..seeding import rng_for
from .base import BackendIdentity, BackendSet, DetectionResponse, Role, SegmentationResponse, check_prompt

MOCK_VERSION = "1"
MOCK_BOX = BoundingBox(0.25, 0.25, 0.75, 0.75, confidence=0.9)


def image_digest(image: ImageBuffer) -> str:
    h = hashlib.sha256()
    h.update(f"{image.width}x{image.height}x{image.pixels.shape[2]}".encode())
    h.update(image.data)
    return h.hexdigest()


@dataclass
class MockDetector:
    """Returns one centered box covering a quarter of the image area.

    Images whose :func:`image_digest` is in ``empty_digests`` (or every image,
    with ``always_empty``) get no detections.
    """

    empty_digests: FrozenSet[str] = frozenset()
    always_empty: bool = False
    identity: BackendIdentity = field(
        default_factory=lambda: BackendIdentity(Role.DETECTOR, "mock-detector", MOCK_VERSION)
    )

    def detect(self, image: ImageBuffer, text_prompt: str) -> DetectionResponse:
        check_prompt(text_prompt)
        if self.always_empty or (self.empty_digests and image_digest(image) in self.empty_digests):
            return DetectionResponse(())
        return DetectionResponse((MOCK_BOX,))


def ellipse_mask(width: int, height: int, box: BoundingBox) -> np.ndarray:
    """Rasterize the ellipse inscribed in ``box``; a pixel is set if its center is inside.

    A box too thin to contain any pixel center yields the single row (or
    column) segment through the box center.
    """
    x0, y0, x1, y1 = box.to_pixels(width, height)
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    rx, ry = (x1 - x0) / 2.0, (y1 - y0) / 2.0
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    dx = (xs + 0.5 - cx) / rx
    dy = (ys + 0.5 - cy) / ry
    bits = dx * dx + dy * dy <= 1.0
    if bits.any():
        return bits
    row = min(int(np.floor(cy)), height - 1)
    col = min(int(np.floor(cx)), width - 1)
    bits = np.zeros((height, width), dtype=bool)
    xc = np.arange(width) + 0.5
    yc = np.arange(height) + 0.5
    if rx >= ry:
        bits[row, np.abs(xc - cx) <= max(rx, 0.5)] = True
    else:
        bits[np.abs(yc - cy) <= max(ry, 0.5), col] = True
    bits[row, col] = True
    return bits


@dataclass
class MockSegmenter:
    """Segments the ellipse inscribed in the requested box."""

    empty: bool = False
    identity: BackendIdentity = field(
        default_factory=lambda: BackendIdentity(Role.SEGMENTER, "mock-segmenter", MOCK_VERSION)
    )

    def segment(self, image: ImageBuffer, box: BoundingBox) -> SegmentationResponse:
        if self.empty:
            raise EmptyMaskReturned("mock segmenter configured to return an empty mask")
        return SegmentationResponse(SubjectMask(ellipse_mask(image.width, image.height, box)))


_OPENINGS = ("A wide view of", "A quiet stretch of", "A sweeping panorama of", "A soft-focus photo of",
             "A detailed landscape of", "An untouched corner of", "A serene view of", "A rugged expanse of")
_PLACES = ("rolling hills", "weathered rocks", "tall pine trees", "shallow water", "wild grasses",
           "scattered boulders", "low shrubs", "a gravel path", "smooth pebbles", "fallen leaves")
_DETAILS = ("beneath a wide sky", "framed by distant ridges", "with mist drifting low",
            "with sunlight filtering through", "edged by dense foliage", "under scattered clouds",
            "beside a still pond", "with long shadows")
_LIGHT = ("warm golden light", "cool blue light", "diffuse overcast light", "bright midday light",
          "soft pastel light", "dramatic low light")
_PALETTE = ("earthy", "muted green", "amber", "silver grey", "slate blue", "rosy", "ochre")
_MOOD = ("calm", "peaceful", "crisp", "hazy", "vivid", "moody")


@dataclass
class MockCaptioner:
    """Fills a caption template with words picked by a stable hash of ``(prompt, nonce)``.

    ``mode="echo"`` returns the prompt verbatim. ``inject_word`` makes the
    captioner place that word in the caption, either on the attempts listed
    in ``inject_attempts`` (0-based nonces) or, when that is None, with
    probability ``inject_probability`` decided by the same hash.
    """

    mode: str = "template"
    inject_word: Optional[str] = None
    inject_probability: float = 0.0
    inject_attempts: Optional[FrozenSet[int]] = None
    identity: BackendIdentity = field(
        default_factory=lambda: BackendIdentity(Role.CAPTIONER, "mock-captioner", MOCK_VERSION)
    )

    def __post_init__(self):
        if self.mode not in ("template", "echo"):
            raise InvalidValue(f"unknown mock captioner mode {self.mode!r}")

    def _injects(self, rng: np.random.Generator, nonce: int) -> bool:
        if self.inject_word is None:
            return False
        if self.inject_attempts is not None:
            return nonce in self.inject_attempts
        return bool(rng.random() < self.inject_probability)

    def caption(self, prompt: str, retry_nonce: int = 0) -> str:
        check_prompt(prompt, "prompt")
        if self.mode == "echo":
            return prompt
        rng = rng_for("caption", prompt, retry_nonce)
        pick = lambda words: words[int(rng.integers(len(words)))]  # noqa: E731
        text = (
            f"{pick(_OPENINGS)} {pick(_PLACES)} {pick(_DETAILS)}, {pick(_LIGHT)}, "
            f"{pick(_PALETTE)} tones, a {pick(_MOOD)} atmosphere"
        )
        if self._injects(rng, retry_nonce):
            word = self.inject_word
            word = (word, word.capitalize(), word.upper())[int(rng.integers(3))]
            text += f", with a {word} in the foreground"
        return text + ", no people."


def _upsample(grid: np.ndarray, width: int, height: int) -> np.ndarray:
    gh, gw = grid.shape[:2]
    ys = np.linspace(0.0, gh - 1.0, height)
    xs = np.linspace(0.0, gw - 1.0, width)
    y0 = np.minimum(np.floor(ys).astype(int), gh - 2)
    x0 = np.minimum(np.floor(xs).astype(int), gw - 2)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    g00 = grid[y0][:, x0]
    g01 = grid[y0][:, x0 + 1]
    g10 = grid[y0 + 1][:, x0]
    g11 = grid[y0 + 1][:, x0 + 1]
    top = g00 * (1 - fx) + g01 * fx
    bottom = g10 * (1 - fx) + g11 * fx
    return top * (1 - fy) + bottom * fy


def value_noise_scene(seed: int, width: int, height: int, octaves: int = 4) -> np.ndarray:
    """Procedural RGB scene: a two-colour vertical gradient plus multi-octave value noise."""
    rng = np.random.default_rng(seed)
    top, bottom = rng.integers(0, 256, size=(2, 3)).astype(np.float64)
    t = np.linspace(0.0, 1.0, height)[:, None, None]
    scene = np.broadcast_to(top * (1 - t) + bottom * t, (height, width, 3)).copy()
    amplitude = 64.0
    for octave in range(octaves):
        cells = 2 * 2**octave + 1
        grid = rng.uniform(-1.0, 1.0, size=(cells, cells, 3))
        scene += amplitude * _upsample(grid, width, height)
        amplitude /= 2.0
    return np.clip(np.rint(scene), 0, 255).astype(np.uint8)


@dataclass
class MockBackgroundGenerator:
    identity: BackendIdentity = field(
        default_factory=lambda: BackendIdentity(Role.BACKGROUND_GENERATOR, "mock-background", MOCK_VERSION)
    )

    def generate_background(self, caption: str, seed: int, target: Tuple[int, int]) -> ImageBuffer:
        check_prompt(caption, "caption")
        width, height = target
        if width < 1 or height < 1:
            raise InvalidValue("target must be at least 1x1")
        scene_seed = rng_for("background", caption, seed).integers(0, 2**63)
        return ImageBuffer(value_noise_scene(int(scene_seed), width, height))


class Recording:
    """Thread-safe wrapper that logs every call made to a backend before delegating."""

    def __init__(self, inner):
        self.inner = inner
        self.identity = inner.identity
        self.calls: List[Tuple[str, tuple]] = []
        self._lock = threading.Lock()

    def _record(self, name, args):
        with self._lock:
            self.calls.append((name, args))

    def detect(self, image, text_prompt):
        self._record("detect", (text_prompt,))
        return self.inner.detect(image, text_prompt)

    def segment(self, image, box):
        self._record("segment", (box,))
        return self.inner.segment(image, box)

    def caption(self, prompt, retry_nonce=0):
        self._record("caption", (prompt, retry_nonce))
        return self.inner.caption(prompt, retry_nonce)

    def generate_background(self, caption, seed, target):
        self._record("generate_background", (caption, seed, tuple(target)))
        return self.inner.generate_background(caption, seed, target)


def mock_backends(**detector_kwargs) -> BackendSet:
    return BackendSet(MockDetector(**detector_kwargs), MockSegmenter(), MockCaptioner(), MockBackgroundGenerator())
