"""Combinatorial background-prompt generation with avoid-word enforcement."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import FrozenSet, Iterable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CaptionRejectedAfterRetries, ConfigError, IndexOutOfBounds, InvalidValue

log = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[0-9a-z]+")


@dataclass(frozen=True)
class ModalitySets:
    instructions: Tuple[str, ...]
    backgrounds: Tuple[str, ...]
    temporals: Tuple[str, ...]

    def __post_init__(self):
        for name in ("instructions", "backgrounds", "temporals"):
            entries = tuple(getattr(self, name))
            object.__setattr__(self, name, entries)
            if not entries:
                raise InvalidValue(f"{name} must be non-empty")
            if any(not isinstance(e, str) or not e.strip() for e in entries):
                raise InvalidValue(f"{name} contains an empty entry")
            if len(set(entries)) != len(entries):
                raise InvalidValue(f"{name} contains duplicate entries")

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return len(self.instructions), len(self.backgrounds), len(self.temporals)


@dataclass(frozen=True)
class AvoidList:
    words: FrozenSet[str] = frozenset()

    def __post_init__(self):
        words = frozenset(self.words)
        for w in words:
            if not w or w != w.lower() or any(c.isspace() for c in w):
                raise InvalidValue(f"avoid word {w!r} must be a non-empty lowercase token")
        object.__setattr__(self, "words", words)

    @classmethod
    def from_phrases(cls, phrases: Iterable[str]) -> "AvoidList":
        """Build a list from free-form names, splitting each into lowercase tokens."""
        words = set()
        for phrase in phrases:
            words.update(_TOKEN_RE.findall(phrase.lower()))
        return cls(frozenset(words))

    def union(self, other: "AvoidList") -> "AvoidList":
        return AvoidList(self.words | other.words)

    def __len__(self):
        return len(self.words)


@dataclass(frozen=True)
class PromptSpec:
    instruction_idx: int
    background_idx: int
    temporal_idx: int
    rendered: str

    @property
    def indices(self) -> Tuple[int, int, int]:
        return self.instruction_idx, self.background_idx, self.temporal_idx


@dataclass(frozen=True)
class CaptionResult:
    caption: str
    spec: PromptSpec
    attempts: int


@dataclass(frozen=True)
class PromptLibrary:
    """Modality sets plus the avoid list loaded from one configuration file."""

    sets: ModalitySets
    avoid: AvoidList


def space_size(sets: ModalitySets) -> int:
    n_ins, n_bgr, n_tmp = sets.sizes
    return n_ins * n_bgr * n_tmp


def render_prompt(indices: Sequence[int], sets: ModalitySets, avoid: AvoidList = AvoidList()) -> str:
    """Render the engineered prompt for an index triple.

    The sentence is ``"<instruction> <background> <temporal>."``; a non-empty
    avoid list appends ``" Do not mention: w1, w2."`` with words sorted.
    """
    i, b, t = indices
    for idx, entries, name in (
        (i, sets.instructions, "instruction"),
        (b, sets.backgrounds, "background"),
        (t, sets.temporals, "temporal"),
    ):
        if not 0 <= idx < len(entries):
            raise IndexOutOfBounds(f"{name} index {idx} outside [0, {len(entries)})")
    text = f"{sets.instructions[i]} {sets.backgrounds[b]} {sets.temporals[t]}."
    if avoid.words:
        text += " Do not mention: " + ", ".join(sorted(avoid.words)) + "."
    return text


def sample_spec(
    rng: Union[np.random.Generator, int], sets: ModalitySets, avoid: AvoidList = AvoidList()
) -> PromptSpec:
    """Draw one (instruction, background, temporal) triple uniformly."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    n_ins, n_bgr, n_tmp = sets.sizes
    i = int(rng.integers(n_ins))
    b = int(rng.integers(n_bgr))
    t = int(rng.integers(n_tmp))
    return PromptSpec(i, b, t, render_prompt((i, b, t), sets, avoid))


def enumerate_specs(sets: ModalitySets, avoid: AvoidList = AvoidList()) -> Iterator[PromptSpec]:
    n_ins, n_bgr, n_tmp = sets.sizes
    for i in range(n_ins):
        for b in range(n_bgr):
            for t in range(n_tmp):
                yield PromptSpec(i, b, t, render_prompt((i, b, t), sets, avoid))


def caption_tokens(caption: str) -> list:
    return _TOKEN_RE.findall(caption.lower())


def sanitize_caption(caption: str, avoid: AvoidList) -> bool:
    """Return True if ``caption`` contains no avoid word as a whole token."""
    if not avoid.words:
        return True
    return not any(tok in avoid.words for tok in caption_tokens(caption))


def obtain_caption(spec: PromptSpec, captioner, avoid: AvoidList, max_retries: int = 3) -> CaptionResult:
    """Ask ``captioner`` for a background caption, retrying while it names an avoid word.

    Attempt ``n`` (0-based) is sent with ``retry_nonce=n``. Backend errors
    propagate unchanged.
    """
    if max_retries < 1:
        raise InvalidValue("max_retries must be >= 1")
    caption = ""
    for attempt in range(max_retries):
        caption = captioner.caption(spec.rendered, attempt)
        if caption and caption.strip() and sanitize_caption(caption, avoid):
            return CaptionResult(caption, spec, attempt + 1)
        log.debug("rejected caption on attempt %d: %r", attempt + 1, caption)
    raise CaptionRejectedAfterRetries(max_retries, caption)


def parse_library(doc: dict) -> PromptLibrary:
    try:
        sets = ModalitySets(
            tuple(doc["instructions"]), tuple(doc["backgrounds"]), tuple(doc["temporals"])
        )
        avoid = AvoidList(frozenset(doc.get("avoid", [])))
    except KeyError as exc:
        raise ConfigError(f"modality-set file is missing the {exc.args[0]!r} list") from None
    except (TypeError, InvalidValue) as exc:
        raise ConfigError(f"malformed modality-set file: {exc}") from None
    return PromptLibrary(sets, avoid)


def load_library(path: Optional[Union[str, Path]] = None) -> PromptLibrary:
    """Load a modality-set file; ``None`` loads the shipped default library."""
    try:
        if path is None:
            text = resources.files("subjectswap.data").joinpath("modality_sets.json").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        doc = json.loads(text)
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read modality-set file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"modality-set file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("modality-set file must contain a JSON object")
    return parse_library(doc)
