"""Command-line entry point: ``subjectswap {augment,prompts,isolate,validate,serve-stub}``."""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from .backends import (
    BackendSet,
    HttpBackgroundGenerator,
    HttpCaptioner,
    HttpDetector,
    HttpSegmenter,
    MockBackgroundGenerator,
    MockCaptioner,
    MockDetector,
    MockSegmenter,
)
from .backends.stub import StubServer, load_fixtures
from .errors import (
    BackendError,
    ConfigError,
    DecodeError,
    EmptyMaskReturned,
    FatalIOError,
    InvalidValue,
    NoDetection,
    PipelineError,
    UnreadableManifest,
    UnresolvableSuperclass,
)
from .geometry import AffineRanges
from .imageio import atomic_write_bytes, encode_png, load_image
from .isolation import NO_DETECTION_POLICIES, SuperclassTable, isolate
from .manifest import MANIFEST_NAME, validate_manifest
from .orchestrator import AugmentConfig, load_dataset, plan, run
from .prompts import AvoidList, load_library, sample_spec, space_size

log = logging.getLogger("subjectswap")

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_USAGE = 2
EXIT_PIPELINE = 3

# option dest -> default; also the keys accepted in a --config JSON file
AUGMENT_DEFAULTS = {
    "dataset": None,
    "out": None,
    "scale": 1,
    "seed": 0,
    "mock": False,
    "detector_url": None,
    "segmenter_url": None,
    "captioner_url": None,
    "background_url": None,
    "sets": None,
    "superclasses": None,
    "jobs": None,
    "on_no_detection": "error",
    "theta_range": [-25.0, 25.0],
    "scale_range": [0.7, 1.3],
    "allow_vflip": False,
    "translate": False,
    "caption_per": "replica",
    "max_caption_retries": 3,
    "min_mask_fraction": 0.005,
}


class UsageError(Exception):
    pass


def _range(text: str) -> List[float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI but got {text!r}") from None
    return [lo, hi]


def _add_backend_flags(p: argparse.ArgumentParser, roles: Sequence[str]):
    p.add_argument("--mock", action="store_true", default=None, help="use deterministic in-process mock backends")
    for role in roles:
        p.add_argument(f"--{role}-url", default=None, metavar="URL", help=f"{role} server base URL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subjectswap", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="augment a dataset k-fold")
    p.add_argument("--config", type=Path, help="JSON file with option defaults (flags override it)")
    p.add_argument("--dataset", type=Path, help="dataset JSON manifest or <root>/<class>/* directory")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--scale", type=int, help="augmented replicas per source image (k)")
    p.add_argument("--seed", type=int, help="global seed")
    _add_backend_flags(p, ("detector", "segmenter", "captioner", "background"))
    p.add_argument("--sets", type=Path, help="modality-set JSON file (default: shipped library)")
    p.add_argument("--superclasses", type=Path, help="class -> superclass TSV (default: ImageNet10 table)")
    p.add_argument("--jobs", type=int, help="worker threads (default: CPU count)")
    p.add_argument("--on-no-detection", choices=NO_DETECTION_POLICIES)
    p.add_argument("--theta-range", type=_range, metavar="LO,HI", help="rotation range in degrees")
    p.add_argument("--scale-range", type=_range, metavar="LO,HI", help="subject scale range")
    p.add_argument("--allow-vflip", action="store_true", default=None)
    p.add_argument("--translate", action="store_true", default=None, help="randomly move the subject")
    p.add_argument("--caption-per", choices=("replica", "source"))
    p.add_argument("--max-caption-retries", type=int)
    p.add_argument("--min-mask-fraction", type=float)

    p = sub.add_parser("prompts", help="sample engineered background prompts")
    p.add_argument("--sets", type=Path)
    p.add_argument("-n", type=int, default=5, help="number of prompts to print")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--superclasses", type=Path, help="add these superclasses to the avoid list")

    p = sub.add_parser("isolate", help="cut the subject out of one image")
    p.add_argument("image", type=Path)
    p.add_argument("--class", dest="class_name", required=True, help="fine class name")
    p.add_argument("--superclasses", type=Path)
    _add_backend_flags(p, ("detector", "segmenter"))
    p.add_argument("--on-no-detection", choices=NO_DETECTION_POLICIES, default="error")
    p.add_argument("--min-mask-fraction", type=float, default=0.005)

    p = sub.add_parser("validate", help="check a run manifest against its outputs")
    p.add_argument("manifest", type=Path, help="manifest.jsonl or the output directory holding it")

    p = sub.add_parser("serve-stub", help="serve canned protocol fixtures over HTTP")
    p.add_argument("--fixtures", type=Path, help="directory of <kind>.json files (default: shipped)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8700)
    return parser


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge defaults <- config file <- explicit flags."""
    opts = dict(AUGMENT_DEFAULTS)
    if args.config is not None:
        try:
            doc = json.loads(args.config.read_text("utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(doc) - set(AUGMENT_DEFAULTS))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        opts.update(doc)
    for key in AUGMENT_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    for key in ("dataset", "out"):
        if opts[key] is None:
            raise UsageError(f"--{key} is required (flag or config file)")
    for key in ("dataset", "out", "sets", "superclasses"):
        if opts[key] is not None:
            opts[key] = Path(opts[key])
    if opts["jobs"] is None:
        opts["jobs"] = os.cpu_count() or 1
    if opts["scale"] < 1:
        raise UsageError("--scale must be >= 1")
    if opts["jobs"] < 1:
        raise UsageError("--jobs must be >= 1")
    return opts


def make_backends(opts: dict, roles=("detector", "segmenter", "captioner", "background")):
    mock = bool(opts.get("mock"))
    factories = {
        "detector": (MockDetector, HttpDetector),
        "segmenter": (MockSegmenter, HttpSegmenter),
        "captioner": (MockCaptioner, HttpCaptioner),
        "background": (MockBackgroundGenerator, HttpBackgroundGenerator),
    }
    built = {}
    for role in roles:
        url = opts.get(f"{role}_url")
        mock_cls, http_cls = factories[role]
        if url:
            built[role] = http_cls(url, max_in_flight=opts.get("jobs") or 8)
        elif mock:
            built[role] = mock_cls()
        else:
            raise UsageError(f"no {role} backend: pass --{role}-url or --mock")
    return built


def _jsonable(opts: dict) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in opts.items()}


def cmd_augment(args) -> int:
    opts = resolve_options(args)
    table = SuperclassTable.load(opts["superclasses"])
    library = load_library(opts["sets"])
    dataset = load_dataset(opts["dataset"], table)
    b = make_backends(opts)
    backends = BackendSet(b["detector"], b["segmenter"], b["captioner"], b["background"])
    try:
        affine = AffineRanges(
            theta=tuple(opts["theta_range"]),
            scale=tuple(opts["scale_range"]),
            allow_vflip=bool(opts["allow_vflip"]),
            translate=bool(opts["translate"]),
        )
        config = AugmentConfig(
            global_seed=opts["seed"],
            library=library,
            affine=affine,
            no_detection_policy=opts["on_no_detection"],
            min_mask_fraction=opts["min_mask_fraction"],
            caption_per=opts["caption_per"],
            max_caption_retries=opts["max_caption_retries"],
            jobs=opts["jobs"],
        )
    except InvalidValue as exc:
        raise UsageError(str(exc)) from None
    tasks = plan(dataset, opts["scale"], opts["seed"])
    log.info("planned %d tasks over %d images", len(tasks), len(dataset))
    summary = run(tasks, dataset, backends, config, opts["out"], header_extra={"cli": _jsonable(opts)})
    print(summary)
    return EXIT_OK if summary.failed == 0 else EXIT_FAILURES


def cmd_prompts(args) -> int:
    library = load_library(args.sets)
    avoid = library.avoid
    if args.superclasses is not None:
        avoid = avoid.union(AvoidList.from_phrases(SuperclassTable.load(args.superclasses).superclasses()))
    if args.n < 0:
        raise UsageError("-n must be >= 0")
    rng = np.random.default_rng(args.seed)
    for _ in range(args.n):
        print(sample_spec(rng, library.sets, avoid).rendered)
    print(f"space: {space_size(library.sets)}")
    return EXIT_OK


def encode_mask_png(bits: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.where(bits, 255, 0).astype(np.uint8), mode="L").save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


def cmd_isolate(args) -> int:
    table = SuperclassTable.load(args.superclasses)
    label = table.label(args.class_name)
    image = load_image(args.image)
    b = make_backends(vars(args), roles=("detector", "segmenter"))
    subject = isolate(
        image, label, b["detector"], b["segmenter"], policy=args.on_no_detection, min_mask_fraction=args.min_mask_fraction
    )
    stem = args.image.with_suffix("")
    cutout_path = Path(f"{stem}_cutout.png")
    mask_path = Path(f"{stem}_mask.png")
    atomic_write_bytes(cutout_path, encode_png(subject.cutout))
    atomic_write_bytes(mask_path, encode_mask_png(subject.mask.bits))
    print(f"wrote {cutout_path} and {mask_path} ({subject.mask.popcount()} subject pixels)")
    return EXIT_OK


def cmd_validate(args) -> int:
    path = args.manifest
    if path.is_dir():
        path = path / MANIFEST_NAME
    report = validate_manifest(path)
    for v in report.violations:
        print(v)
    print(f"{report.records} records, {len(report.violations)} violations")
    return EXIT_OK if report.ok else EXIT_FAILURES


def cmd_serve_stub(args) -> int:
    fixtures = load_fixtures(args.fixtures)
    server = StubServer(fixtures, args.host, args.port)
    print(f"serving {len(fixtures)} fixtures on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


COMMANDS = {
    "augment": cmd_augment,
    "prompts": cmd_prompts,
    "isolate": cmd_isolate,
    "validate": cmd_validate,
    "serve-stub": cmd_serve_stub,
}


def _diagnostic(exc: Exception) -> str:
    if isinstance(exc, NoDetection):
        return f"detector: {exc}"
    if isinstance(exc, EmptyMaskReturned):
        return f"segmenter: {exc}"
    if isinstance(exc, BackendError):
        return f"backend: {exc}"
    if isinstance(exc, DecodeError):
        return f"decode error: {exc}"
    if isinstance(exc, UnresolvableSuperclass):
        return f"superclass table: {exc}"
    return str(exc)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, UnresolvableSuperclass) as exc:
        print(f"error: {_diagnostic(exc)}", file=sys.stderr)
        return EXIT_USAGE
    except (UnreadableManifest, FatalIOError, PipelineError) as exc:
        print(f"error: {_diagnostic(exc)}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
