"""HTTP/JSON clients for remote model servers."""

from __future__ import annotations

import logging
import threading
import time
from typing import Optional, Tuple

import requests

from ..core import BoundingBox, ImageBuffer
from ..errors import BackendError, BackendUnreachable
from . import protocol
from .base import BackendIdentity, DetectionResponse, Role, SegmentationResponse, check_prompt

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
DEFAULT_RETRIES = 2
DEFAULT_BACKOFF = 0.5


class HttpBackend:
    """Shared POST/retry plumbing.

    Connection failures, timeouts and 5xx answers are retried ``retries``
    times with exponential backoff; 4xx answers fail immediately.
    """

    role: Role

    def __init__(
        self,
        base_url: str,
        name: Optional[str] = None,
        version: str = "unknown",
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
        backoff: float = DEFAULT_BACKOFF,
        max_in_flight: int = 8,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.identity = BackendIdentity(self.role, name or f"http-{self.role.value}", version, self.base_url)
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))

    def _post(self, endpoint: str, body: bytes) -> bytes:
        url = self.base_url + endpoint
        last: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = requests.post(
                        url, data=body, headers={"Content-Type": "application/json"}, timeout=self.timeout
                    )
            except requests.RequestException as exc:
                last = exc
                log.warning("%s attempt %d failed: %s", url, attempt + 1, exc)
                continue
            if resp.status_code >= 500:
                last = BackendError(f"{url} answered {resp.status_code}")
                log.warning("%s attempt %d: HTTP %d", url, attempt + 1, resp.status_code)
                continue
            if resp.status_code != 200:
                raise BackendError(f"{url} rejected request: HTTP {resp.status_code}: {resp.text[:200]}")
            return resp.content
        raise BackendUnreachable(f"{url} unreachable after {self.retries + 1} attempts: {last}")


class HttpDetector(HttpBackend):
    role = Role.DETECTOR

    def detect(self, image: ImageBuffer, text_prompt: str) -> DetectionResponse:
        check_prompt(text_prompt)
        body = protocol.encode("detect_request", protocol.DetectRequest(image, text_prompt))
        return protocol.decode("detect_response", self._post(protocol.ENDPOINTS["detect"], body))


class HttpSegmenter(HttpBackend):
    role = Role.SEGMENTER

    def segment(self, image: ImageBuffer, box: BoundingBox) -> SegmentationResponse:
        body = protocol.encode("segment_request", protocol.SegmentRequest(image, box))
        resp = protocol.decode("segment_response", self._post(protocol.ENDPOINTS["segment"], body))
        if (resp.mask.width, resp.mask.height) != image.size:
            raise protocol.MalformedResponse(
                f"mask is {resp.mask.width}x{resp.mask.height}, image is {image.width}x{image.height}"
            )
        return resp


class HttpCaptioner(HttpBackend):
    role = Role.CAPTIONER

    def caption(self, prompt: str, retry_nonce: int = 0) -> str:
        check_prompt(prompt, "prompt")
        body = protocol.encode("caption_request", protocol.CaptionRequest(prompt, retry_nonce))
        return protocol.decode("caption_response", self._post(protocol.ENDPOINTS["caption"], body)).caption


class HttpBackgroundGenerator(HttpBackend):
    role = Role.BACKGROUND_GENERATOR

    def generate_background(self, caption: str, seed: int, target: Tuple[int, int]) -> ImageBuffer:
        check_prompt(caption, "caption")
        width, height = target
        body = protocol.encode("background_request", protocol.BackgroundRequest(caption, seed, width, height))
        resp = protocol.decode("background_response", self._post(protocol.ENDPOINTS["background"], body))
        return resp.image
