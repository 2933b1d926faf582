"""JSON wire format for the four backend roles.

Every message is a JSON object serialized canonically (sorted keys, no
insignificant whitespace, UTF-8), so ``encode(decode(x)) == x`` holds for
any canonically encoded message. See ``docs/protocol.md``.
"""

from __future__ import annotations

import base64
import binascii
import json
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple, Type

import numpy as np

from ..core import BoundingBox, Channels, ImageBuffer, SubjectMask
from ..errors import DecodeError, EmptyMaskReturned, InvalidValue, MalformedResponse
from ..imageio import decode_image, encode_png
from .base import DetectionResponse, SegmentationResponse

PROTOCOL_VERSION = 1

ENDPOINTS = {
    "detect": "/detect",
    "segment": "/segment",
    "caption": "/caption",
    "background": "/background",
}


# -- run-length encoding -----------------------------------------------------


def rle_encode(bits: np.ndarray) -> List[int]:
    """Row-major run lengths of a boolean mask, starting with a (possibly zero) run of 0s."""
    flat = np.asarray(bits, dtype=bool).ravel()
    if flat.size == 0:
        return [0]
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def rle_decode(runs: List[int], width: int, height: int) -> np.ndarray:
    if not isinstance(runs, list) or not runs:
        raise MalformedResponse("rle must be a non-empty list")
    if any(not isinstance(r, int) or isinstance(r, bool) or r < 0 for r in runs):
        raise MalformedResponse("rle runs must be non-negative integers")
    if any(r == 0 for r in runs[1:]):
        raise MalformedResponse("only the first rle run may be zero")
    if sum(runs) != width * height:
        raise MalformedResponse(f"rle covers {sum(runs)} pixels, expected {width * height}")
    values = np.arange(len(runs)) % 2 == 1
    return np.repeat(values, runs).reshape(height, width)


# -- field codecs ------------------------------------------------------------


def box_to_json(box: BoundingBox) -> dict:
    return {
        "x_min": box.x_min,
        "y_min": box.y_min,
        "x_max": box.x_max,
        "y_max": box.y_max,
        "confidence": box.confidence,
    }


def box_from_json(d: dict) -> BoundingBox:
    return BoundingBox(
        float(d["x_min"]), float(d["y_min"]), float(d["x_max"]), float(d["y_max"]), float(d["confidence"])
    )


def image_to_json(image: ImageBuffer) -> dict:
    return {
        "format": "png",
        "width": image.width,
        "height": image.height,
        "channels": image.channels.name,
        "data": base64.b64encode(encode_png(image)).decode("ascii"),
    }


def image_from_json(d: dict) -> ImageBuffer:
    if d.get("format") != "png":
        raise MalformedResponse(f"unsupported image format {d.get('format')!r}")
    try:
        raw = base64.b64decode(d["data"], validate=True)
    except (binascii.Error, TypeError) as exc:
        raise MalformedResponse(f"bad base64 image payload: {exc}") from None
    channels = Channels[d.get("channels", "RGB8")]
    try:
        img = decode_image(raw, keep_alpha=channels is Channels.RGBA8)
    except DecodeError as exc:
        raise MalformedResponse(str(exc)) from None
    if img.size != (d["width"], d["height"]):
        raise MalformedResponse(f"image is {img.size}, header says {(d['width'], d['height'])}")
    if img.channels is not channels:
        raise MalformedResponse(f"image has {img.channels.name}, header says {channels.name}")
    return img


def mask_to_json(mask: SubjectMask) -> dict:
    return {"width": mask.width, "height": mask.height, "rle": rle_encode(mask.bits)}


def mask_from_json(d: dict) -> SubjectMask:
    bits = rle_decode(d["rle"], int(d["width"]), int(d["height"]))
    if not bits.any():
        raise EmptyMaskReturned("segmenter returned an empty mask")
    return SubjectMask(bits)


# -- messages ----------------------------------------------------------------


@dataclass(frozen=True)
class DetectRequest:
    image: ImageBuffer
    text_prompt: str

    def to_json(self) -> dict:
        return {"image": image_to_json(self.image), "text_prompt": self.text_prompt}

    @classmethod
    def from_json(cls, d: dict) -> "DetectRequest":
        return cls(image_from_json(d["image"]), str(d["text_prompt"]))


@dataclass(frozen=True)
class SegmentRequest:
    image: ImageBuffer
    box: BoundingBox

    def to_json(self) -> dict:
        return {"image": image_to_json(self.image), "box": box_to_json(self.box)}

    @classmethod
    def from_json(cls, d: dict) -> "SegmentRequest":
        return cls(image_from_json(d["image"]), box_from_json(d["box"]))


@dataclass(frozen=True)
class CaptionRequest:
    prompt: str
    retry_nonce: int = 0

    def to_json(self) -> dict:
        return {"prompt": self.prompt, "retry_nonce": self.retry_nonce}

    @classmethod
    def from_json(cls, d: dict) -> "CaptionRequest":
        return cls(str(d["prompt"]), int(d["retry_nonce"]))


@dataclass(frozen=True)
class CaptionResponse:
    caption: str

    def to_json(self) -> dict:
        return {"caption": self.caption}

    @classmethod
    def from_json(cls, d: dict) -> "CaptionResponse":
        caption = d["caption"]
        if not isinstance(caption, str) or not caption.strip():
            raise MalformedResponse("caption must be a non-empty string")
        return cls(caption)


@dataclass(frozen=True)
class BackgroundRequest:
    caption: str
    seed: int
    width: int
    height: int

    def to_json(self) -> dict:
        return {"caption": self.caption, "seed": self.seed, "width": self.width, "height": self.height}

    @classmethod
    def from_json(cls, d: dict) -> "BackgroundRequest":
        return cls(str(d["caption"]), int(d["seed"]), int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class BackgroundResponse:
    image: ImageBuffer

    def to_json(self) -> dict:
        return {"image": image_to_json(self.image)}

    @classmethod
    def from_json(cls, d: dict) -> "BackgroundResponse":
        img = image_from_json(d["image"])
        if img.channels is not Channels.RGB8:
            raise MalformedResponse("background must be RGB8")
        return cls(img)


def _detection_to_json(resp: DetectionResponse) -> dict:
    return {"boxes": [box_to_json(b) for b in resp.boxes]}


def _detection_from_json(d: dict) -> DetectionResponse:
    if not isinstance(d.get("boxes"), list):
        raise MalformedResponse("'boxes' must be a list")
    return DetectionResponse(tuple(box_from_json(b) for b in d["boxes"]))


def _segmentation_to_json(resp: SegmentationResponse) -> dict:
    return {"mask": mask_to_json(resp.mask)}


def _segmentation_from_json(d: dict) -> SegmentationResponse:
    return SegmentationResponse(mask_from_json(d["mask"]))


# message kind -> (type, to_json, from_json)
MESSAGES: Dict[str, Tuple[Type, Callable, Callable]] = {
    "detect_request": (DetectRequest, DetectRequest.to_json, DetectRequest.from_json),
    "detect_response": (DetectionResponse, _detection_to_json, _detection_from_json),
    "segment_request": (SegmentRequest, SegmentRequest.to_json, SegmentRequest.from_json),
    "segment_response": (SegmentationResponse, _segmentation_to_json, _segmentation_from_json),
    "caption_request": (CaptionRequest, CaptionRequest.to_json, CaptionRequest.from_json),
    "caption_response": (CaptionResponse, CaptionResponse.to_json, CaptionResponse.from_json),
    "background_request": (BackgroundRequest, BackgroundRequest.to_json, BackgroundRequest.from_json),
    "background_response": (BackgroundResponse, BackgroundResponse.to_json, BackgroundResponse.from_json),
}


def dumps(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def encode(kind: str, message) -> bytes:
    _, to_json, _ = MESSAGES[kind]
    return dumps(to_json(message))


def decode(kind: str, payload: bytes):
    """Parse ``payload`` as message ``kind``; any structural problem is a MalformedResponse."""
    _, _, from_json = MESSAGES[kind]
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedResponse(f"{kind}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise MalformedResponse(f"{kind}: expected a JSON object")
    try:
        return from_json(doc)
    except (MalformedResponse, EmptyMaskReturned):
        raise
    except (KeyError, TypeError, ValueError, InvalidValue) as exc:
        raise MalformedResponse(f"{kind}: {type(exc).__name__}: {exc}") from None
