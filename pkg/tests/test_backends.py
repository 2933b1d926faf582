import json
import math
import re
import socket
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import texture
from subjectswap.backends import protocol
from subjectswap.backends.base import BackendIdentity, DetectionResponse, Role
from subjectswap.backends.http import HttpBackend, HttpBackgroundGenerator, HttpCaptioner, HttpDetector, HttpSegmenter
from subjectswap.backends.mock import (
    MockBackgroundGenerator,
    MockCaptioner,
    MockDetector,
    MockSegmenter,
    Recording,
    ellipse_mask,
    image_digest,
)
from subjectswap.backends.stub import StubServer, load_fixtures
from subjectswap.core import BoundingBox, ImageBuffer, SubjectMask
from subjectswap.errors import BackendError, BackendUnreachable, EmptyMaskReturned, InvalidValue, MalformedResponse

IMG = ImageBuffer(texture(24, 16, 0))


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class TestIdentity:
    def test_round_trip(self):
        ident = BackendIdentity(Role.CAPTIONER, "llm", "3.1", "http://x:1")
        assert BackendIdentity.from_dict(ident.to_dict()) == ident

    def test_requires_name_and_version(self):
        with pytest.raises(InvalidValue):
            BackendIdentity(Role.DETECTOR, "", "1")
        with pytest.raises(InvalidValue):
            BackendIdentity(Role.DETECTOR, "d", "")


class TestMockDetector:
    def test_fixed_box(self):
        resp = MockDetector().detect(IMG, "bird")
        assert [b.as_tuple() for b in resp.boxes] == [(0.25, 0.25, 0.75, 0.75)]
        assert resp.top.confidence == 0.9

    def test_empty_prompt_rejected(self):
        with pytest.raises(InvalidValue):
            MockDetector().detect(IMG, "")

    def test_scripted_empty(self):
        det = MockDetector(empty_digests=frozenset({image_digest(IMG)}))
        assert det.detect(IMG, "bird").boxes == ()
        assert det.detect(ImageBuffer(texture(24, 16, 1)), "bird").boxes

    def test_responses_sorted(self):
        boxes = (BoundingBox(0, 0, 1, 1, 0.2), BoundingBox(0, 0, 0.5, 0.5, 0.7), BoundingBox(0, 0, 1, 1, 0.5))
        resp = DetectionResponse(boxes)
        assert [b.confidence for b in resp.boxes] == [0.7, 0.5, 0.2]
        assert DetectionResponse(()).top is None


class TestMockSegmenter:
    def test_full_box_ellipse_area(self):
        resp = MockSegmenter().segment(ImageBuffer.filled(100, 100, (0, 0, 0)), BoundingBox(0, 0, 1, 1))
        expected = math.pi / 4 * 10000
        assert abs(resp.mask.popcount() - expected) <= 0.02 * expected

    def test_mask_inside_box(self):
        box = BoundingBox(0.1, 0.3, 0.6, 0.9)
        bits = MockSegmenter().segment(ImageBuffer.filled(50, 40, (0, 0, 0)), box).mask.bits
        x0, y0, x1, y1 = box.to_pixels(50, 40)
        outside = np.ones_like(bits)
        outside[int(y0):int(math.ceil(y1)), int(x0):int(math.ceil(x1))] = False
        assert not (bits & outside).any()

    def test_thin_box_is_a_row_segment(self):
        # 1 px tall box from x=10 to x=30 on row 7, edges between pixel centres
        box = BoundingBox(10 / 40, 7.2 / 20, 30 / 40, 7.4 / 20)
        bits = ellipse_mask(40, 20, box)
        rows = np.flatnonzero(bits.any(axis=1))
        assert rows.tolist() == [7]
        cols = np.flatnonzero(bits[7])
        assert cols.min() >= 10 and cols.max() <= 29 and len(cols) == 20

    def test_empty_mode(self):
        with pytest.raises(EmptyMaskReturned):
            MockSegmenter(empty=True).segment(IMG, BoundingBox(0, 0, 1, 1))


class TestRle:
    def test_examples(self):
        assert protocol.rle_encode(np.array([[0, 0, 1], [1, 1, 0]], dtype=bool)) == [2, 3, 1]
        assert protocol.rle_encode(np.array([[1, 0]], dtype=bool)) == [0, 1, 1]

    @settings(max_examples=100, deadline=None)
    @given(arrays(bool, st.tuples(st.integers(1, 9), st.integers(1, 9))))
    def test_round_trip(self, bits):
        runs = protocol.rle_encode(bits)
        h, w = bits.shape
        np.testing.assert_array_equal(protocol.rle_decode(runs, w, h), bits)
        assert protocol.rle_encode(protocol.rle_decode(runs, w, h)) == runs

    @pytest.mark.parametrize("runs", [[], [3, 0, 3], [-1, 7], [2, 2], [1.5, 4.5], [True, 5]])
    def test_rejects_malformed(self, runs):
        with pytest.raises(MalformedResponse):
            protocol.rle_decode(runs, 3, 2)

    def test_mask_bytes_round_trip(self):
        bits = ellipse_mask(30, 20, BoundingBox(0.1, 0.2, 0.8, 0.9))
        wire = protocol.dumps({"mask": protocol.mask_to_json(SubjectMask(bits))})
        decoded = protocol.decode("segment_response", wire)
        np.testing.assert_array_equal(decoded.mask.bits, bits)
        assert protocol.encode("segment_response", decoded) == wire

    def test_empty_mask_on_wire(self):
        body = protocol.dumps({"mask": {"width": 2, "height": 2, "rle": [4]}})
        with pytest.raises(EmptyMaskReturned):
            protocol.decode("segment_response", body)


class TestMockCaptioner:
    prompt = "Describe a scene in a dense forest at dawn."

    def test_deterministic(self):
        assert MockCaptioner().caption(self.prompt, 0) == MockCaptioner().caption(self.prompt, 0)

    def test_nonce_perturbs(self):
        cap = MockCaptioner()
        outs = {cap.caption(self.prompt, n) for n in range(8)}
        assert len(outs) > 1
        assert cap.caption(self.prompt, 0) != cap.caption(self.prompt, 1)

    def test_inject_mode(self):
        cap = MockCaptioner(inject_word="spider", inject_attempts=frozenset({0}))
        assert "spider" in re.findall(r"[0-9a-z]+", cap.caption(self.prompt, 0).lower())
        assert "spider" not in cap.caption(self.prompt, 1).lower()

    def test_inject_probability(self):
        cap = MockCaptioner(inject_word="bird", inject_probability=0.5)
        hits = sum("bird" in cap.caption(self.prompt, n).lower() for n in range(2000))
        assert 900 < hits < 1100

    def test_empty_prompt(self):
        with pytest.raises(InvalidValue):
            MockCaptioner().caption("", 0)


class TestMockBackground:
    def test_deterministic(self):
        gen = MockBackgroundGenerator()
        assert gen.generate_background("a lake", 3, (64, 64)) == gen.generate_background("a lake", 3, (64, 64))

    def test_dimensions(self):
        assert MockBackgroundGenerator().generate_background("a lake", 3, (37, 21)).size == (37, 21)

    def test_seed_matters(self):
        gen = MockBackgroundGenerator()
        assert gen.generate_background("a lake", 1, (64, 64)) != gen.generate_background("a lake", 2, (64, 64))

    def test_captions_give_distinct_images(self):
        gen = MockBackgroundGenerator()
        cap = MockCaptioner()
        captions = [cap.caption(f"prompt {i}", 0) for i in range(12)]
        imgs = [gen.generate_background(c, 0, (64, 64)).pixels.astype(float) for c in captions]
        for i in range(len(imgs)):
            for j in range(i + 1, len(imgs)):
                assert np.abs(imgs[i] - imgs[j]).mean() / 255 > 10 / 255


class TestRecording:
    def test_logs_and_delegates(self):
        rec = Recording(MockDetector())
        assert rec.detect(IMG, "turtle").top is not None
        assert rec.calls == [("detect", ("turtle",))]
        assert rec.identity.name == "mock-detector"


class TestGolden:
    @pytest.mark.parametrize("kind", sorted(protocol.MESSAGES))
    def test_round_trip(self, kind):
        raw = load_fixtures()[kind]
        assert protocol.encode(kind, protocol.decode(kind, raw)) == raw

    def test_fixtures_are_canonical_json(self):
        for kind, raw in load_fixtures().items():
            assert protocol.dumps(json.loads(raw)) == raw, kind

    @pytest.mark.parametrize("payload", [b"not json", b"[1, 2]", b'{"boxes": 3}', b'{"boxes": [{"x_min": 0}]}'])
    def test_malformed(self, payload):
        with pytest.raises(MalformedResponse):
            protocol.decode("detect_response", payload)

    def test_invalid_box_values(self):
        body = protocol.dumps({"boxes": [{"x_min": 0.6, "y_min": 0, "x_max": 0.5, "y_max": 1, "confidence": 1}]})
        with pytest.raises(MalformedResponse):
            protocol.decode("detect_response", body)


@pytest.fixture
def stub():
    with StubServer(load_fixtures()) as server:
        yield server


class TestHttp:
    def test_detector(self, stub):
        canned = json.loads(load_fixtures()["detect_response"])["boxes"]
        resp = HttpDetector(stub.url, retries=0).detect(IMG, "bird")
        got = [protocol.box_to_json(b) for b in resp.boxes]
        assert got == sorted(canned, key=lambda b: -b["confidence"])
        kind, msg = stub.requests[-1]
        assert kind == "detect_request" and msg.text_prompt == "bird" and msg.image == IMG

    def test_segmenter(self, stub):
        canned = json.loads(load_fixtures()["segment_response"])["mask"]
        mask = HttpSegmenter(stub.url, retries=0).segment(IMG, BoundingBox(0.1, 0.1, 0.9, 0.9)).mask
        assert protocol.rle_encode(mask.bits) == canned["rle"]

    def test_segmenter_dimension_check(self, stub):
        with pytest.raises(MalformedResponse):
            HttpSegmenter(stub.url, retries=0).segment(ImageBuffer(texture(10, 10, 0)), BoundingBox(0, 0, 1, 1))

    def test_captioner(self, stub):
        canned = json.loads(load_fixtures()["caption_response"])["caption"]
        assert HttpCaptioner(stub.url, retries=0).caption("Describe a lake.", 2) == canned
        assert stub.requests[-1][1].retry_nonce == 2

    def test_background(self, stub):
        canned = protocol.decode("background_response", load_fixtures()["background_response"]).image
        img = HttpBackgroundGenerator(stub.url, retries=0).generate_background("a lake", 5, (24, 16))
        assert img == canned and img.data == canned.data

    def test_identity_records_endpoint(self, stub):
        det = HttpDetector(stub.url, name="gdino", version="1.0")
        assert det.identity.to_dict() == {"role": "detector", "name": "gdino", "version": "1.0", "endpoint": stub.url}

    def test_unreachable_after_retries(self):
        det = HttpDetector(f"http://127.0.0.1:{free_port()}", retries=2, backoff=0.0, timeout=2)
        with pytest.raises(BackendUnreachable, match="3 attempts"):
            det.detect(IMG, "bird")

    def test_server_errors_are_retried(self):
        fixtures = load_fixtures()
        del fixtures["detect_response"]
        with StubServer(fixtures) as server:
            with pytest.raises(BackendUnreachable):
                HttpDetector(server.url, retries=1, backoff=0.0).detect(IMG, "bird")
            assert len(server.requests) == 2

    def test_client_errors_are_not_retried(self, stub):
        client = HttpBackend.__new__(HttpDetector)
        HttpBackend.__init__(client, stub.url, retries=3, backoff=0.0)
        with pytest.raises(BackendError) as info:
            client._post("/nowhere", b"{}")
        assert not isinstance(info.value, BackendUnreachable)

    def test_malformed_response(self):
        fixtures = load_fixtures()
        fixtures["caption_response"] = b'{"text": 1}'
        with StubServer(fixtures) as server:
            with pytest.raises(MalformedResponse):
                HttpCaptioner(server.url, retries=0).caption("Describe a lake.", 0)

    def test_concurrent_requests(self, stub):
        det = HttpDetector(stub.url, retries=0, max_in_flight=2)
        with ThreadPoolExecutor(6) as pool:
            results = list(pool.map(lambda _: det.detect(IMG, "bird"), range(12)))
        assert all(r == results[0] for r in results)
        assert len(stub.requests) == 12
