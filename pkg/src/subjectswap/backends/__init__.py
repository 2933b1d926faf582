from .base import (
    BackendIdentity,
    BackendSet,
    BackgroundGenerator,
    Captioner,
    DetectionResponse,
    Detector,
    Role,
    SegmentationResponse,
    Segmenter,
)
from .http import HttpBackgroundGenerator, HttpCaptioner, HttpDetector, HttpSegmenter
from .mock import (
    MockBackgroundGenerator,
    MockCaptioner,
    MockDetector,
    MockSegmenter,
    Recording,
    image_digest,
    mock_backends,
)

__all__ = [
    "BackendIdentity",
    "BackendSet",
    "BackgroundGenerator",
    "Captioner",
    "DetectionResponse",
    "Detector",
    "HttpBackgroundGenerator",
    "HttpCaptioner",
    "HttpDetector",
    "HttpSegmenter",
    "MockBackgroundGenerator",
    "MockCaptioner",
    "MockDetector",
    "MockSegmenter",
    "Recording",
    "Role",
    "SegmentationResponse",
    "Segmenter",
    "image_digest",
    "mock_backends",
]
