from pathlib import Path

import numpy as np
import pytest

from subjectswap.core import ImageBuffer, SubjectMask, cutout_subject
from subjectswap.imageio import save_png
from subjectswap.isolation import SuperclassTable

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []

IMAGENET10 = [
    "chickadee",
    "water ouzel",
    "loggerhead",
    "box turtle",
    "garter snake",
    "sea snake",
    "black and gold garden spider",
    "tick",
    "ptarmigan",
    "prairie chicken",
]


def texture(width, height, seed, smooth=False):
    """Synthetic RGB texture; ``smooth`` keeps spatial frequencies low."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    chans = []
    for _ in range(3):
        fx, fy = rng.uniform(0.02, 0.06 if smooth else 0.4, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        chans.append(127.5 + 100 * np.sin(fx * xs + fy * ys + phase))
    img = np.stack(chans, axis=2)
    if not smooth:
        img += rng.normal(0, 20, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def random_blob_mask(rng, width, height):
    """Union of a few random ellipses, guaranteed non-empty."""
    ys, xs = np.mgrid[0:height, 0:width] + 0.5
    bits = np.zeros((height, width), dtype=bool)
    for _ in range(rng.integers(1, 4)):
        cx, cy = rng.uniform(0.2, 0.8) * width, rng.uniform(0.2, 0.8) * height
        rx, ry = rng.uniform(0.08, 0.3) * width, rng.uniform(0.08, 0.3) * height
        bits |= ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1
    if not bits.any():
        bits[height // 2, width // 2] = True
    return bits


def random_subject(rng, width, height, smooth=False):
    img = ImageBuffer(texture(width, height, int(rng.integers(2**31)), smooth=smooth))
    return cutout_subject(img, SubjectMask(random_blob_mask(rng, width, height)))


def make_fixture_dataset(root: Path, size=(64, 48)) -> Path:
    """Ten images, one per ImageNet10 class, laid out as ``<root>/<class>/<id>.png``."""
    width, height = size
    for i, name in enumerate(IMAGENET10):
        save_png(root / name / f"img{i:02d}.png", ImageBuffer(texture(width, height, 1000 + i)))
    return root


@pytest.fixture
def fixture_dataset(tmp_path):
    return make_fixture_dataset(tmp_path / "dataset")


@pytest.fixture(scope="session")
def table():
    return SuperclassTable.load()


def run_fixture(dataset_root, out_dir, k=3, seed=7, backends=None, tasks=None, **config_kwargs):
    """Plan and run the mock pipeline over a fixture dataset; returns (summary, tasks)."""
    from subjectswap.backends.mock import mock_backends
    from subjectswap.orchestrator import AugmentConfig, plan, run, scan_directory

    dataset = scan_directory(dataset_root, SuperclassTable.load())
    config_kwargs.setdefault("jobs", 1)
    config = AugmentConfig(global_seed=seed, **config_kwargs)
    if tasks is None:
        tasks = plan(dataset, k, seed)
    summary = run(tasks, dataset, backends or mock_backends(), config, out_dir)
    return summary, tasks


def output_hashes(out_dir):
    """Map relative path -> sha256 for every PNG under ``out_dir``."""
    import hashlib

    out_dir = Path(out_dir)
    return {
        p.relative_to(out_dir).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(out_dir.rglob("*.png"))
    }


def manifest_lines_without_timestamps(out_dir):
    import json

    from subjectswap.manifest import MANIFEST_NAME, strip_timestamps

    lines = (Path(out_dir) / MANIFEST_NAME).read_text("utf-8").splitlines()
    return [strip_timestamps(json.loads(line)) for line in lines]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
