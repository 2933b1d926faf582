import itertools
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2

from subjectswap.backends.mock import MockCaptioner
from subjectswap.errors import CaptionRejectedAfterRetries, ConfigError, IndexOutOfBounds, InvalidValue
from subjectswap.prompts import (
    AvoidList,
    ModalitySets,
    enumerate_specs,
    load_library,
    obtain_caption,
    render_prompt,
    sample_spec,
    sanitize_caption,
    space_size,
)


def sets_of(n_ins, n_bgr, n_tmp):
    return ModalitySets(
        tuple(f"Instruction {i}" for i in range(n_ins)),
        tuple(f"in place {i}" for i in range(n_bgr)),
        tuple(f"at time {i}" for i in range(n_tmp)),
    )


def token_scan(text):
    """Split on non-alphanumerics by walking characters (no regex)."""
    tokens, cur = [], []
    for ch in text.lower():
        if ch.isascii() and ch.isalnum():
            cur.append(ch)
        elif cur:
            tokens.append("".join(cur))
            cur = []
    if cur:
        tokens.append("".join(cur))
    return tokens


class TestModalitySets:
    def test_invariants(self):
        with pytest.raises(InvalidValue):
            ModalitySets((), ("b",), ("t",))
        with pytest.raises(InvalidValue):
            ModalitySets(("a", "a"), ("b",), ("t",))
        with pytest.raises(InvalidValue):
            ModalitySets(("a", " "), ("b",), ("t",))

    def test_avoid_words_are_lowercase_tokens(self):
        for bad in ("Spider", "sea snake", ""):
            with pytest.raises(InvalidValue):
                AvoidList(frozenset({bad}))
        assert AvoidList.from_phrases(["Sea Snake", "bird"]).words == {"sea", "snake", "bird"}

    def test_shipped_library_sizes(self):
        lib = load_library()
        assert lib.sets.sizes == (3, 18, 13)
        assert {"spider", "bird", "snake", "turtle"} <= lib.avoid.words

    def test_malformed_library(self, tmp_path):
        bad = tmp_path / "sets.json"
        bad.write_text('{"instructions": ["a"], "backgrounds": ["b"]}')
        with pytest.raises(ConfigError, match="temporals"):
            load_library(bad)
        bad.write_text("not json")
        with pytest.raises(ConfigError):
            load_library(bad)
        with pytest.raises(ConfigError):
            load_library(tmp_path / "missing.json")


class TestSpaceSize:
    @pytest.mark.parametrize("sizes", [(1, 1, 1), (2, 3, 4), (3, 18, 13)])
    def test_matches_enumeration(self, sizes):
        sets = sets_of(*sizes)
        triples = list(itertools.product(*(range(n) for n in sizes)))
        assert space_size(sets) == len(triples)

    def test_known_values(self):
        assert space_size(sets_of(1, 1, 1)) == 1
        assert space_size(sets_of(2, 3, 4)) == 24
        assert space_size(sets_of(3, 18, 13)) == 702

    def test_rendering_has_no_collisions(self):
        lib = load_library()
        rendered = {s.rendered for s in enumerate_specs(lib.sets, lib.avoid)}
        assert len(rendered) == space_size(lib.sets)


class TestRender:
    sets = ModalitySets(("Describe a scene",), ("in a dense forest",), ("at dawn",))

    def test_plain_sentence(self):
        assert render_prompt((0, 0, 0), self.sets, AvoidList()) == "Describe a scene in a dense forest at dawn."

    def test_exclusion_trailer(self):
        text = render_prompt((0, 0, 0), self.sets, AvoidList(frozenset({"spider"})))
        assert text == "Describe a scene in a dense forest at dawn. Do not mention: spider."

    def test_out_of_bounds(self):
        with pytest.raises(IndexOutOfBounds):
            render_prompt((0, 1, 0), self.sets)
        with pytest.raises(IndexOutOfBounds):
            render_prompt((-1, 0, 0), self.sets)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2), st.integers(0, 17), st.integers(0, 12))
    def test_fragments_in_order(self, i, b, t):
        lib = load_library()
        text = render_prompt((i, b, t), lib.sets, lib.avoid)
        p_i = text.find(lib.sets.instructions[i])
        p_b = text.find(lib.sets.backgrounds[b], p_i + 1)
        p_t = text.find(lib.sets.temporals[t], p_b + 1)
        assert 0 == p_i < p_b < p_t


class TestSample:
    def test_single_triple(self):
        for seed in range(5):
            assert sample_spec(seed, sets_of(1, 1, 1)).indices == (0, 0, 0)

    def test_seeded_reproducible(self):
        sets = sets_of(3, 18, 13)
        assert sample_spec(12345, sets) == sample_spec(12345, sets)

    def test_reproducible_across_processes(self):
        code = (
            "from subjectswap.prompts import load_library, sample_spec;"
            "lib = load_library(); print(sample_spec(20240607, lib.sets, lib.avoid).rendered)"
        )
        outs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
                for _ in range(2)}
        lib = load_library()
        assert outs == {sample_spec(20240607, lib.sets, lib.avoid).rendered + "\n"}

    def test_uniform_over_triples(self):
        sizes = (3, 18, 13)
        sets = sets_of(*sizes)
        n = 100_000
        rng = np.random.default_rng(99)
        counts = np.zeros(sizes, dtype=np.int64)
        for _ in range(n):
            counts[sample_spec(rng, sets).indices] += 1
        p = 1 / 702
        expected = n * p
        se = np.sqrt(n * p * (1 - p))
        assert (np.abs(counts - expected) <= 5 * se).all()
        stat = ((counts - expected) ** 2 / expected).sum()
        assert chi2.sf(stat, df=701) > 0.001


class TestSanitize:
    avoid = AvoidList(frozenset({"spider"}))

    @pytest.mark.parametrize(
        "caption, ok",
        [
            ("a misty mountain lake at dusk", True),
            ("a spider web across the trail", False),
            ("spiderweb patterns in frost", True),
            ("A SPIDER, lurking", False),
            ("light on the spider-silk", False),
        ],
    )
    def test_examples(self, caption, ok):
        assert sanitize_caption(caption, self.avoid) is ok
        assert ("spider" not in token_scan(caption)) is ok

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet="abspider XYZ-,.", max_size=40))
    def test_agrees_with_token_scanner(self, caption):
        assert sanitize_caption(caption, self.avoid) == ("spider" not in token_scan(caption))

    def test_cattle_not_in_seattle(self):
        assert sanitize_caption("downtown Seattle skyline", AvoidList(frozenset({"cattle"})))


class _Scripted:
    """Captioner returning a fixed sequence; counts calls."""

    def __init__(self, captions):
        self.captions = list(captions)
        self.nonces = []

    def caption(self, prompt, retry_nonce=0):
        self.nonces.append(retry_nonce)
        return self.captions[len(self.nonces) - 1]


class TestObtainCaption:
    def test_echo(self):
        sets = ModalitySets(("Describe a scene",), ("in a dense forest",), ("at dawn",))
        spec = sample_spec(0, sets)
        res = obtain_caption(spec, MockCaptioner(mode="echo"), AvoidList(), max_retries=3)
        assert res.caption == spec.rendered and res.attempts == 1

    def test_retry_then_clean(self):
        spec = sample_spec(0, sets_of(3, 18, 13))
        cap = MockCaptioner(inject_word="spider", inject_attempts=frozenset({0}))
        res = obtain_caption(spec, cap, AvoidList(frozenset({"spider"})), max_retries=3)
        assert res.attempts == 2
        assert sanitize_caption(res.caption, AvoidList(frozenset({"spider"})))

    def test_exhausts_retries(self):
        spec = sample_spec(0, sets_of(3, 18, 13))
        scripted = _Scripted(["a spider here"] * 5)
        with pytest.raises(CaptionRejectedAfterRetries) as info:
            obtain_caption(spec, scripted, AvoidList(frozenset({"spider"})), max_retries=3)
        assert scripted.nonces == [0, 1, 2]
        assert info.value.attempts == 3

    def test_rejects_empty_captions(self):
        spec = sample_spec(0, sets_of(1, 1, 1))
        scripted = _Scripted(["", "fine meadow"])
        assert obtain_caption(spec, scripted, AvoidList(), max_retries=2).attempts == 2

    def test_max_retries_precondition(self):
        with pytest.raises(InvalidValue):
            obtain_caption(sample_spec(0, sets_of(1, 1, 1)), MockCaptioner(), AvoidList(), max_retries=0)
