"""Detect -> segment -> cut out, prompting the detector with the class superclass."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Union

from .core import BoundingBox, ClassLabel, ImageBuffer, MaskedSubject, cutout_subject
from .errors import ConfigError, EmptyMaskReturned, InvalidValue, NoDetection, UnresolvableSuperclass

log = logging.getLogger(__name__)

NO_DETECTION_POLICIES = ("error", "center-box")
CENTER_BOX = BoundingBox(0.125, 0.125, 0.875, 0.875, confidence=0.0)
DEFAULT_MIN_MASK_FRACTION = 0.005


@dataclass(frozen=True)
class SuperclassTable:
    mapping: Mapping[str, str]

    def __post_init__(self):
        clean = {}
        for fine, sup in dict(self.mapping).items():
            if not fine.strip() or not sup.strip():
                raise InvalidValue(f"empty name in superclass table entry {fine!r} -> {sup!r}")
            clean[fine.strip()] = sup.strip()
        object.__setattr__(self, "mapping", clean)

    def label(self, fine_name: str) -> ClassLabel:
        try:
            return ClassLabel(fine_name, self.mapping[fine_name])
        except KeyError:
            raise UnresolvableSuperclass(
                f"class {fine_name!r} has no entry in the superclass table"
            ) from None

    def superclasses(self):
        return sorted(set(self.mapping.values()))

    def __contains__(self, fine_name):
        return fine_name in self.mapping

    def __len__(self):
        return len(self.mapping)

    @classmethod
    def parse(cls, text: str) -> "SuperclassTable":
        """Parse tab-separated ``fine_name<TAB>superclass`` lines; ``#`` starts a comment line."""
        mapping: Dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigError(f"superclass table line {lineno}: expected 2 tab-separated columns")
            fine, sup = parts[0].strip(), parts[1].strip()
            if fine in mapping and mapping[fine] != sup:
                raise ConfigError(f"superclass table line {lineno}: {fine!r} mapped twice")
            mapping[fine] = sup
        try:
            return cls(mapping)
        except InvalidValue as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> "SuperclassTable":
        """Load a table file; ``None`` loads the shipped ImageNet10 table."""
        try:
            if path is None:
                text = resources.files("subjectswap.data").joinpath("imagenet10_superclasses.tsv").read_text("utf-8")
            else:
                text = Path(path).read_text("utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot read superclass table {path}: {exc}") from None
        return cls.parse(text)


def select_box(boxes, policy: str) -> BoundingBox:
    if boxes:
        return boxes[0]
    if policy == "center-box":
        return CENTER_BOX
    if policy == "error":
        raise NoDetection("detector returned no boxes")
    raise InvalidValue(f"unknown no-detection policy {policy!r}")


def isolate(
    image: ImageBuffer,
    label: ClassLabel,
    detector,
    segmenter,
    policy: str = "error",
    min_mask_fraction: float = DEFAULT_MIN_MASK_FRACTION,
) -> MaskedSubject:
    """Cut the labeled subject out of ``image``.

    The detector is prompted with ``label.superclass`` (never the fine
    name); the highest-confidence box guides the segmenter. With policy
    ``center-box`` an empty detection falls back to the central 75% box.
    Masks covering less than ``min_mask_fraction`` of the image raise
    EmptyMaskReturned.
    """
    if policy not in NO_DETECTION_POLICIES:
        raise InvalidValue(f"unknown no-detection policy {policy!r}")
    detections = detector.detect(image, label.superclass)
    box = select_box(detections.boxes, policy)
    if not detections.boxes:
        log.info("no detection for %r; using fallback box", label.fine_name)
    mask = segmenter.segment(image, box).mask
    area = image.width * image.height
    if mask.popcount() < min_mask_fraction * area:
        raise EmptyMaskReturned(
            f"mask covers {mask.popcount()} of {area} pixels, below the {min_mask_fraction:.2%} minimum"
        )
    return cutout_subject(image, mask)
