"""Append-only JSON-lines provenance manifest.

Line 1 is a header object (``"kind": "header"``) carrying the schema
version and the effective run configuration; every following line is one
record (``"kind": "record"``). Output paths in records are relative to the
manifest's directory.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

from .errors import FatalIOError, UnreadableManifest

SCHEMA = "subjectswap/manifest"
SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.jsonl"

DONE = "done"
FAILED = "failed"

# field -> accepted JSON types for every record; done records need more
RECORD_FIELDS = {
    "kind": str,
    "image_id": str,
    "replica_idx": int,
    "task_seed": int,
    "class": str,
    "superclass": str,
    "status": str,
    "backends": dict,
    "finished_at": str,
}
DONE_FIELDS = {
    "output_path": str,
    "sha256": str,
    "foreground_coverage": float,
    "prompt": dict,
    "affine": dict,
    "seeds": dict,
}
TIMESTAMP_FIELDS = ("finished_at", "created_at")


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def sha256_file(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def record_key(record: dict) -> Tuple[str, int]:
    return record["image_id"], record["replica_idx"]


def strip_timestamps(obj: dict) -> dict:
    return {k: v for k, v in obj.items() if k not in TIMESTAMP_FIELDS}


def dumps_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def make_header(config: dict, fingerprint: str) -> dict:
    return {
        "kind": "header",
        "schema": SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "fingerprint": fingerprint,
        "config": config,
        "created_at": utc_now(),
    }


@dataclass
class ManifestContents:
    header: Optional[dict]
    records: List[dict]
    # (line number, problem) for lines that were not valid JSON objects
    bad_lines: List[Tuple[int, str]] = field(default_factory=list)
    truncated_tail: bool = False


def read_manifest(path: Union[str, Path]) -> ManifestContents:
    """Parse a manifest, tolerating a torn (newline-less) final line left by a crash."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise UnreadableManifest(f"cannot read manifest {path}: {exc}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise UnreadableManifest(f"manifest {path} is not UTF-8: {exc}") from None
    lines = text.split("\n")
    truncated = False
    if lines and lines[-1] == "":
        lines.pop()
    elif lines:
        truncated = True
    header = None
    records = []
    bad = []
    for lineno, line in enumerate(lines, 1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            if truncated and lineno == len(lines):
                break
            bad.append((lineno, f"invalid JSON: {exc}"))
            continue
        if not isinstance(obj, dict):
            bad.append((lineno, "line is not a JSON object"))
        elif lineno == 1 and obj.get("kind") == "header":
            header = obj
        else:
            obj["_line"] = lineno
            records.append(obj)
    return ManifestContents(header, records, bad, truncated)


class ManifestWriter:
    """Serializes record appends from many workers into one file."""

    def __init__(self, path: Union[str, Path], header: Optional[dict] = None):
        self.path = Path(path)
        self._lock = threading.Lock()
        try:
            self._repair_tail()
            self._fh = open(self.path, "a", encoding="utf-8")
            if header is not None and self.path.stat().st_size == 0:
                self._write(header)
        except OSError as exc:
            raise FatalIOError(f"cannot open manifest {self.path}: {exc}") from None

    def _repair_tail(self):
        if not self.path.exists():
            return
        with open(self.path, "rb+") as fh:
            data = fh.read()
            if data and not data.endswith(b"\n"):
                fh.truncate(data.rfind(b"\n") + 1)

    def _write(self, obj: dict):
        self._fh.write(dumps_line(obj))
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def append(self, record: dict):
        with self._lock:
            try:
                self._write(record)
            except OSError as exc:
                raise FatalIOError(f"cannot append to manifest {self.path}: {exc}") from None

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def latest_records(records: List[dict]) -> Dict[Tuple[str, int], dict]:
    """Last record per (image_id, replica_idx); later lines supersede earlier ones."""
    out = {}
    for rec in records:
        try:
            out[record_key(rec)] = rec
        except (KeyError, TypeError):
            continue
    return out


@dataclass(frozen=True)
class Violation:
    kind: str
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.kind}: {self.message}"


@dataclass
class ValidationReport:
    path: Path
    records: int
    violations: List[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def by_kind(self, kind: str) -> List[Violation]:
        return [v for v in self.violations if v.kind == kind]


def _type_ok(value, expected) -> bool:
    if expected is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if expected is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, expected)


def _schema_problems(rec: dict) -> List[str]:
    problems = []
    required = dict(RECORD_FIELDS)
    if rec.get("status") == DONE:
        required.update(DONE_FIELDS)
    for name, typ in required.items():
        if name not in rec:
            problems.append(f"missing field {name!r}")
        elif not _type_ok(rec[name], typ):
            problems.append(f"field {name!r} has type {type(rec[name]).__name__}")
    if rec.get("kind") != "record":
        problems.append(f"kind is {rec.get('kind')!r}, expected 'record'")
    if rec.get("status") not in (DONE, FAILED):
        problems.append(f"unknown status {rec.get('status')!r}")
    if rec.get("status") == FAILED and not isinstance(rec.get("reason"), str):
        problems.append("failed record has no reason")
    return problems


def validate_manifest(path: Union[str, Path]) -> ValidationReport:
    """Check schema, uniqueness, output-file existence and content hashes."""
    path = Path(path)
    contents = read_manifest(path)
    violations: List[Violation] = []
    for lineno, msg in contents.bad_lines:
        violations.append(Violation("schema", lineno, msg))
    header = contents.header
    if header is None:
        violations.append(Violation("header", 1, "first line is not a manifest header"))
    else:
        if header.get("schema") != SCHEMA:
            violations.append(Violation("header", 1, f"unknown schema {header.get('schema')!r}"))
        if header.get("schema_version") != SCHEMA_VERSION:
            violations.append(Violation("header", 1, f"unsupported schema_version {header.get('schema_version')!r}"))

    base = path.parent
    # a resumed run may re-record a task whose output was redone; that is only a
    # duplicate when the two done records disagree about the output
    done_by_key: Dict[Tuple[str, int], dict] = {}
    owner_of_path: Dict[str, Tuple[str, int]] = {}
    for rec in contents.records:
        line = rec["_line"]
        problems = _schema_problems(rec)
        if problems:
            violations.extend(Violation("schema", line, p) for p in problems)
            continue
        if rec["status"] != DONE:
            continue
        key = record_key(rec)
        prev = done_by_key.get(key)
        if prev is not None and (prev["output_path"], prev["sha256"]) != (rec["output_path"], rec["sha256"]):
            violations.append(
                Violation("duplicate", line, f"{key} already recorded as done with different output on line {prev['_line']}")
            )
        owner = owner_of_path.setdefault(rec["output_path"], key)
        if owner != key:
            violations.append(Violation("duplicate", line, f"output {rec['output_path']} also claimed by {owner}"))
        done_by_key[key] = rec

    for rec in done_by_key.values():
        out = base / rec["output_path"]
        if not out.is_file():
            violations.append(Violation("missing-file", rec["_line"], f"{rec['output_path']} does not exist"))
            continue
        actual = sha256_file(out)
        if actual != rec["sha256"]:
            violations.append(
                Violation("hash-mismatch", rec["_line"], f"{rec['output_path']}: sha256 {actual} != recorded {rec['sha256']}")
            )
    violations.sort(key=lambda v: v.line)
    return ValidationReport(path, len(contents.records), violations)


def iter_records(path: Union[str, Path]) -> Iterator[dict]:
    for rec in read_manifest(path).records:
        rec = dict(rec)
        rec.pop("_line", None)
        yield rec
