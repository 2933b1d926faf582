from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Protocol, Tuple, runtime_checkable

from ..core import BoundingBox, ImageBuffer, SubjectMask
from ..errors import InvalidValue


class Role(enum.Enum):
    DETECTOR = "detector"
    SEGMENTER = "segmenter"
    CAPTIONER = "captioner"
    BACKGROUND_GENERATOR = "background_generator"


@dataclass(frozen=True)
class BackendIdentity:
    role: Role
    name: str
    version: str
    endpoint: str = "mock"

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        if not self.name or not self.version:
            raise InvalidValue("backend name and version must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role.value, "name": self.name, "version": self.version, "endpoint": self.endpoint}

    @classmethod
    def from_dict(cls, d: dict) -> "BackendIdentity":
        return cls(Role(d["role"]), d["name"], d["version"], d.get("endpoint", "mock"))


@dataclass(frozen=True)
class DetectionResponse:
    boxes: Tuple[BoundingBox, ...] = ()

    def __post_init__(self):
        ordered = tuple(sorted(self.boxes, key=lambda b: -b.confidence))
        object.__setattr__(self, "boxes", ordered)

    @property
    def top(self):
        return self.boxes[0] if self.boxes else None


@dataclass(frozen=True)
class SegmentationResponse:
    mask: SubjectMask


@runtime_checkable
class Detector(Protocol):
    identity: BackendIdentity

    def detect(self, image: ImageBuffer, text_prompt: str) -> DetectionResponse: ...


@runtime_checkable
class Segmenter(Protocol):
    identity: BackendIdentity

    def segment(self, image: ImageBuffer, box: BoundingBox) -> SegmentationResponse: ...


@runtime_checkable
class Captioner(Protocol):
    identity: BackendIdentity

    def caption(self, prompt: str, retry_nonce: int) -> str: ...


@runtime_checkable
class BackgroundGenerator(Protocol):
    identity: BackendIdentity

    def generate_background(self, caption: str, seed: int, target: Tuple[int, int]) -> ImageBuffer: ...


@dataclass(frozen=True)
class BackendSet:
    """The four services one pipeline run talks to."""

    detector: Detector
    segmenter: Segmenter
    captioner: Captioner
    generator: BackgroundGenerator

    def identities(self) -> List[BackendIdentity]:
        return [self.detector.identity, self.segmenter.identity, self.captioner.identity, self.generator.identity]


def check_prompt(text: str, what: str = "text_prompt") -> None:
    if not isinstance(text, str) or not text.strip():
        raise InvalidValue(f"{what} must be a non-empty string")
