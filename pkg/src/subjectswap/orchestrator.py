"""Plan and execute k-fold background augmentation over a dataset.

Each task is one (source image, replica) pair with a seed derived from the
global seed, so any subset of tasks can run in any order, on any number of
workers, and produce identical bytes.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from collections import OrderedDict
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .backends.base import BackendSet
from .compositor import merge, resize_background
from .core import ClassLabel
from .errors import ConfigError, DuplicateImageId, FatalIOError, InvalidValue, PipelineError, UnresolvableSuperclass
from .geometry import AffineRanges, apply_affine
from .imageio import load_image, save_png
from .isolation import DEFAULT_MIN_MASK_FRACTION, NO_DETECTION_POLICIES, SuperclassTable, isolate
from .manifest import (
    DONE,
    FAILED,
    MANIFEST_NAME,
    ManifestWriter,
    latest_records,
    make_header,
    read_manifest,
    sha256_bytes,
    sha256_file,
    utc_now,
)
from .prompts import AvoidList, PromptLibrary, load_library, obtain_caption, sample_spec
from .seeding import stable_hash

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff")


# -- dataset -----------------------------------------------------------------


@dataclass(frozen=True)
class DatasetEntry:
    image_path: Path
    label: ClassLabel
    image_id: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: Tuple[DatasetEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        seen = set()
        for e in entries:
            if e.image_id in seen:
                raise DuplicateImageId(f"image_id {e.image_id!r} appears more than once")
            seen.add(e.image_id)

    def __len__(self):
        return len(self.entries)

    def by_id(self) -> Dict[str, DatasetEntry]:
        return {e.image_id: e for e in self.entries}

    def superclasses(self) -> List[str]:
        return sorted({e.label.superclass for e in self.entries})


def scan_directory(root: Union[str, Path], table: SuperclassTable) -> DatasetManifest:
    """Build a manifest from ``<root>/<class_dir>/<image>``; image ids are file stems."""
    root = Path(root)
    entries = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(p for p in class_dir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            continue
        label = table.label(class_dir.name)
        entries.extend(DatasetEntry(f, label, f.stem) for f in files)
    return DatasetManifest(tuple(entries))


def load_dataset_json(path: Union[str, Path], table: SuperclassTable) -> DatasetManifest:
    """Read ``{"entries": [{"image_path", "class", "image_id"[, "superclass"]}]}``.

    Relative image paths resolve against the JSON file's directory.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text("utf-8"))
        raw_entries = doc["entries"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read dataset manifest {path}: {exc}") from None
    entries = []
    for item in raw_entries:
        try:
            fine = item["class"]
            image_path = path.parent / item["image_path"]
            image_id = str(item.get("image_id") or Path(item["image_path"]).stem)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"dataset manifest entry {item!r} is missing {exc}") from None
        label = ClassLabel(fine, item["superclass"]) if item.get("superclass") else table.label(fine)
        entries.append(DatasetEntry(image_path, label, image_id))
    return DatasetManifest(tuple(entries))


def load_dataset(path: Union[str, Path], table: SuperclassTable) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        return scan_directory(path, table)
    if path.is_file():
        return load_dataset_json(path, table)
    raise ConfigError(f"dataset {path} does not exist")


# -- planning ----------------------------------------------------------------


@dataclass(frozen=True)
class AugTask:
    image_id: str
    replica_idx: int
    task_seed: int


def task_seed(global_seed: int, image_id: str, replica_idx: int) -> int:
    return stable_hash("task", global_seed, image_id, replica_idx)


def plan(manifest: DatasetManifest, k: int, global_seed: int) -> List[AugTask]:
    """``len(manifest) * k`` tasks sorted by (image_id, replica_idx)."""
    if k < 1:
        raise InvalidValue(f"scale factor must be >= 1, got {k}")
    ids = sorted(e.image_id for e in manifest.entries)
    for a, b in zip(ids, ids[1:]):
        if a == b:
            raise DuplicateImageId(f"image_id {a!r} appears more than once")
    return [AugTask(i, r, task_seed(global_seed, i, r)) for i in ids for r in range(k)]


# -- execution ---------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    """Everything besides the dataset and backends that determines run output."""

    global_seed: int = 0
    library: PromptLibrary = field(default_factory=load_library)
    affine: AffineRanges = AffineRanges()
    no_detection_policy: str = "error"
    min_mask_fraction: float = DEFAULT_MIN_MASK_FRACTION
    caption_per: str = "replica"
    max_caption_retries: int = 3
    jobs: int = field(default_factory=lambda: os.cpu_count() or 1)

    def __post_init__(self):
        if self.no_detection_policy not in NO_DETECTION_POLICIES:
            raise InvalidValue(f"no-detection policy must be one of {NO_DETECTION_POLICIES}")
        if self.caption_per not in ("replica", "source"):
            raise InvalidValue("caption_per must be 'replica' or 'source'")
        if self.jobs < 1:
            raise InvalidValue("jobs must be >= 1")
        if self.max_caption_retries < 1:
            raise InvalidValue("max_caption_retries must be >= 1")

    def to_dict(self) -> dict:
        sets = self.library.sets
        return {
            "global_seed": self.global_seed,
            "modality_sets": {
                "instructions": list(sets.instructions),
                "backgrounds": list(sets.backgrounds),
                "temporals": list(sets.temporals),
            },
            "avoid": sorted(self.library.avoid.words),
            "affine": {
                "theta": list(self.affine.theta),
                "scale": list(self.affine.scale),
                "allow_vflip": self.affine.allow_vflip,
                "translate": self.affine.translate,
            },
            "no_detection_policy": self.no_detection_policy,
            "min_mask_fraction": self.min_mask_fraction,
            "caption_per": self.caption_per,
            "max_caption_retries": self.max_caption_retries,
        }


def fingerprint(config: AugmentConfig, backends: BackendSet) -> str:
    """Hash of every setting that changes output bytes (worker count and scale excluded)."""
    doc = {"config": config.to_dict(), "backends": [b.to_dict() for b in backends.identities()]}
    return "%016x" % stable_hash(json.dumps(doc, sort_keys=True))


@dataclass
class RunSummary:
    done: int = 0
    failed: int = 0
    skipped: int = 0

    def __str__(self):
        return f"{self.done} done, {self.failed} failed, {self.skipped} skipped"


def output_relpath(entry: DatasetEntry, replica_idx: int) -> str:
    class_dir = entry.label.fine_name.replace("/", "_").replace(os.sep, "_")
    return f"{class_dir}/{entry.image_id}_r{replica_idx}.png"


class _LruCache:
    """Bounded per-key memo; concurrent callers for one key compute it once."""

    def __init__(self, size: int = 64):
        self.size = size
        self._data: "OrderedDict[str, object]" = OrderedDict()
        self._lock = threading.Lock()
        self._key_locks: Dict[str, threading.Lock] = {}

    def get(self, key: str, compute: Callable[[], object]):
        with self._lock:
            if key in self._data:
                self._data.move_to_end(key)
                return self._data[key]
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        with key_lock:
            with self._lock:
                if key in self._data:
                    return self._data[key]
            try:
                value = compute()
            except Exception as exc:
                value = exc
            with self._lock:
                self._data[key] = value
                while len(self._data) > self.size:
                    self._data.popitem(last=False)
                self._key_locks.pop(key, None)
            return value


def _isolated(entry: DatasetEntry, backends: BackendSet, config: AugmentConfig, cache: _LruCache):
    def compute():
        image = load_image(entry.image_path)
        subject = isolate(
            image,
            entry.label,
            backends.detector,
            backends.segmenter,
            policy=config.no_detection_policy,
            min_mask_fraction=config.min_mask_fraction,
        )
        return image.size, subject

    value = cache.get(entry.image_id, compute)
    if isinstance(value, BaseException):
        raise value
    return value


def run_task(
    task: AugTask,
    entry: DatasetEntry,
    backends: BackendSet,
    config: AugmentConfig,
    avoid: AvoidList,
    out_dir: Path,
    cache: Optional[_LruCache] = None,
) -> dict:
    """Run the whole pipeline for one task and return its manifest record.

    Pipeline errors become a ``failed`` record; anything else propagates.
    """
    record = {
        "kind": "record",
        "image_id": task.image_id,
        "replica_idx": task.replica_idx,
        "task_seed": task.task_seed,
        "class": entry.label.fine_name,
        "superclass": entry.label.superclass,
        "backends": {b.role.value: b.to_dict() for b in backends.identities()},
    }
    seeds = {
        "prompt": stable_hash(task.task_seed, "prompt")
        if config.caption_per == "replica"
        else stable_hash("source-prompt", config.global_seed, task.image_id),
        "affine": stable_hash(task.task_seed, "affine"),
        "background": stable_hash(task.task_seed, "background"),
        "placement": stable_hash(task.task_seed, "placement"),
    }
    try:
        size, subject = _isolated(entry, backends, config, cache or _LruCache(1))
        lib = config.library
        spec = sample_spec(np.random.default_rng(seeds["prompt"]), lib.sets, avoid)
        caption = obtain_caption(spec, backends.captioner, avoid, config.max_caption_retries)
        background = backends.generator.generate_background(caption.caption, seeds["background"], size)
        background = resize_background(background, size)
        params = config.affine.sample(np.random.default_rng(seeds["affine"]))
        moved = apply_affine(subject, params, size, seeds["placement"], translate=config.affine.translate)
        composite = merge(moved.subject, background)
    except (PipelineError, ValueError, OSError) as exc:
        log.warning("task %s/r%d failed: %s", task.image_id, task.replica_idx, exc)
        record.update(status=FAILED, reason=f"{type(exc).__name__}: {exc}", finished_at=utc_now())
        return record

    rel = output_relpath(entry, task.replica_idx)
    try:
        data = save_png(out_dir / rel, composite.image)
    except OSError as exc:
        raise FatalIOError(f"cannot write {out_dir / rel}: {exc}") from None
    affine = moved.effective.to_dict()
    affine["requested_scale"] = params.scale
    affine["offset"] = list(moved.offset)
    record.update(
        status=DONE,
        output_path=rel,
        sha256=sha256_bytes(data),
        foreground_coverage=composite.foreground_coverage,
        prompt={
            "instruction_idx": spec.instruction_idx,
            "background_idx": spec.background_idx,
            "temporal_idx": spec.temporal_idx,
            "rendered": spec.rendered,
            "caption": caption.caption,
            "attempts": caption.attempts,
        },
        affine=affine,
        seeds=seeds,
        finished_at=utc_now(),
    )
    return record


def effective_avoid(config: AugmentConfig, dataset: DatasetManifest) -> AvoidList:
    """Configured avoid words plus the tokens of every superclass in the dataset."""
    return config.library.avoid.union(AvoidList.from_phrases(dataset.superclasses()))


def completed_keys(out_dir: Path, records: Iterable[dict]) -> set:
    """Keys whose latest record is done and whose output file still hashes correctly."""
    done = set()
    for key, rec in latest_records(list(records)).items():
        if rec.get("status") != DONE:
            continue
        out = out_dir / rec.get("output_path", "")
        try:
            if out.is_file() and sha256_file(out) == rec.get("sha256"):
                done.add(key)
        except OSError:
            continue
    return done


def run(
    tasks: Sequence[AugTask],
    dataset: DatasetManifest,
    backends: BackendSet,
    config: AugmentConfig,
    out_dir: Union[str, Path],
    header_extra: Optional[dict] = None,
) -> RunSummary:
    """Execute ``tasks`` into ``out_dir``, appending one record per finished task.

    Tasks already recorded as done with an intact output file are skipped,
    so an interrupted run can simply be started again. Resuming against a
    manifest written with a different output-affecting configuration raises
    ConfigError.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FatalIOError(f"cannot create output directory {out_dir}: {exc}") from None
    if not os.access(out_dir, os.W_OK):
        raise FatalIOError(f"output directory {out_dir} is not writable")

    fp = fingerprint(config, backends)
    manifest_path = out_dir / MANIFEST_NAME
    skip = set()
    if manifest_path.exists() and manifest_path.stat().st_size > 0:
        contents = read_manifest(manifest_path)
        if contents.header is None:
            raise FatalIOError(f"{manifest_path} has no header line")
        if contents.header.get("fingerprint") != fp:
            raise ConfigError(
                f"{manifest_path} was written with a different configuration "
                f"(fingerprint {contents.header.get('fingerprint')} != {fp}); use a fresh output directory"
            )
        skip = completed_keys(out_dir, contents.records)

    config_doc = config.to_dict()
    config_doc["backends"] = [b.to_dict() for b in backends.identities()]
    if header_extra:
        config_doc.update(header_extra)

    entries = dataset.by_id()
    avoid = effective_avoid(config, dataset)
    summary = RunSummary()
    pending = []
    for task in tasks:
        if task.image_id not in entries:
            raise InvalidValue(f"task references unknown image_id {task.image_id!r}")
        if (task.image_id, task.replica_idx) in skip:
            summary.skipped += 1
        else:
            pending.append(task)

    cache = _LruCache(size=max(64, 4 * config.jobs))
    with ManifestWriter(manifest_path, make_header(config_doc, fp)) as writer:

        def record(rec: dict):
            writer.append(rec)
            if rec["status"] == DONE:
                summary.done += 1
            else:
                summary.failed += 1

        if config.jobs == 1:
            for task in pending:
                record(run_task(task, entries[task.image_id], backends, config, avoid, out_dir, cache))
            return summary

        pool = ThreadPoolExecutor(max_workers=config.jobs, thread_name_prefix="augment")
        try:
            # bounded submission window keeps memory flat for large plans
            window = 4 * config.jobs
            it = iter(pending)
            inflight = set()
            while True:
                while len(inflight) < window:
                    task = next(it, None)
                    if task is None:
                        break
                    inflight.add(
                        pool.submit(run_task, task, entries[task.image_id], backends, config, avoid, out_dir, cache)
                    )
                if not inflight:
                    break
                finished, inflight = wait(inflight, return_when=FIRST_COMPLETED)
                for fut in finished:
                    record(fut.result())
        finally:
            pool.shutdown(wait=True, cancel_futures=True)
    return summary
