"""Regenerate the golden wire-protocol fixtures in src/subjectswap/data/protocol/.

The fixtures are frozen; rerun only when the protocol version changes.
"""

from pathlib import Path

import numpy as np

from subjectswap.backends import protocol
from subjectswap.backends.base import DetectionResponse, SegmentationResponse
from subjectswap.backends.mock import ellipse_mask, value_noise_scene
from subjectswap.core import BoundingBox, ImageBuffer, SubjectMask

OUT = Path(__file__).resolve().parents[1] / "src" / "subjectswap" / "data" / "protocol"


def main():
    ys, xs = np.mgrid[0:16, 0:24]
    image = ImageBuffer(np.stack([xs * 10, ys * 15, (xs + ys) * 5], axis=2).astype(np.uint8))
    box = BoundingBox(0.25, 0.125, 0.75, 0.875, confidence=0.9)
    messages = {
        "detect_request": protocol.DetectRequest(image, "bird"),
        "detect_response": DetectionResponse(
            (box, BoundingBox(0.0625, 0.5, 0.3125, 0.9375, confidence=0.4375))
        ),
        "segment_request": protocol.SegmentRequest(image, box),
        "segment_response": SegmentationResponse(SubjectMask(ellipse_mask(24, 16, box))),
        "caption_request": protocol.CaptionRequest(
            "Describe a scene in a dense forest at dawn. Do not mention: bird, spider.", 1
        ),
        "caption_response": protocol.CaptionResponse(
            "Tall pine trees wrapped in pale morning mist, soft golden light on the forest floor."
        ),
        "background_request": protocol.BackgroundRequest("A quiet alpine meadow at dusk.", 7, 24, 16),
        "background_response": protocol.BackgroundResponse(ImageBuffer(value_noise_scene(7, 24, 16))),
    }
    OUT.mkdir(parents=True, exist_ok=True)
    for kind, message in messages.items():
        (OUT / f"{kind}.json").write_bytes(protocol.encode(kind, message))
        print(kind)


if __name__ == "__main__":
    main()
