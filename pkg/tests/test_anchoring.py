"""Selector describe/anchor cascade against brute-force oracles.

The fuzzy oracle enumerates every window of length len(exact) +- 20% and
scores it with a textbook O(n*m) edit distance, then applies the same
total tie-break the implementation documents. The implementation must
agree with it exactly, including rejections.
"""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from care.anchoring import (
    AnchorFailed,
    AnchorMethod,
    PageText,
    SelectorError,
    SelectorSet,
    TextPositionSelector,
    TextQuoteSelector,
    anchor,
    describe,
    fuzzy_budget,
    reanchor_all,
)

ALPHABET = "abcdefgh XY.\n"


def levenshtein_ref(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def fuzzy_oracle(body: str, exact: str, hint: int):
    """All-windows brute force: min edit distance, then (|s-hint|, s, e)."""
    m = len(exact)
    budget = math.ceil(0.2 * m)
    best = None
    for s in range(len(body)):
        for w in range(max(1, m - budget), m + budget + 1):
            e = s + w
            if e > len(body):
                break
            d = levenshtein_ref(exact, body[s:e])
            key = (d, abs(s - hint), s, e)
            if best is None or key < best:
                best = key
    if best is None or best[0] > budget:
        return None
    return best[2], best[3], best[0]


def random_text(rng: random.Random, length: int) -> str:
    return "".join(rng.choice(ALPHABET) for _ in range(length))


class TestDescribe:
    def test_simple_range(self):
        s = describe("abcdef", 2, 4)
        assert s.quote.exact == "cd"
        assert s.quote.prefix == "ab"
        assert s.quote.suffix == "ef"
        assert (s.position.start, s.position.end) == (2, 4)
        assert s.page_index == 0

    def test_prefix_empty_at_document_start(self):
        s = describe("abcdef", 0, 2)
        assert s.quote.prefix == ""
        assert s.quote.exact == "ab"

    def test_suffix_empty_at_document_end(self):
        s = describe("abcdef", 4, 6)
        assert s.quote.suffix == ""

    def test_context_capped_at_32_chars(self):
        text = "x" * 100 + "TARGET" + "y" * 100
        s = describe(text, 100, 106)
        assert len(s.quote.prefix) == 32
        assert len(s.quote.suffix) == 32

    def test_out_of_bounds_rejected(self):
        for start, end in [(-1, 2), (0, 0), (3, 2), (0, 7)]:
            with pytest.raises(SelectorError):
                describe("abcdef", start, end)

    def test_page_index_from_cumulative_lengths(self):
        pages = ("0123", "4567", "89")
        # joined: "0123\n4567\n89"; page 1 starts at offset 5
        s = describe(pages, 5, 7)
        assert s.page_index == 1
        assert s.quote.exact == "45"

    def test_joiner_offset_belongs_to_earlier_page(self):
        pages = ("ab", "cd")
        assert describe(pages, 2, 4).page_index == 0  # "\nc" starts at the joiner
        assert describe(pages, 3, 5).page_index == 1


class TestPageText:
    def test_page_of_boundaries(self):
        doc = PageText(("ab", "cd", "ef"))
        assert doc.text == "ab\ncd\nef"
        assert [doc.page_of(i) for i in range(len(doc.text))] == [0, 0, 0, 1, 1, 1, 2, 2]

    def test_rejects_empty_page_list(self):
        with pytest.raises(SelectorError):
            PageText(())


class TestAnchorCascade:
    def test_unchanged_text_verifies_position(self):
        text = "the quick brown fox jumps"
        s = describe(text, 4, 9)
        r = anchor(text, s)
        assert (r.start, r.end) == (4, 9)
        assert r.method is AnchorMethod.POSITION_VERIFIED
        assert r.score == 1.0

    def test_insertion_before_quote_found_by_exact_search(self):
        old = "intro text. the highlighted span. outro."
        s = describe(old, 12, 33)
        new = "12345" + old
        r = anchor(new, s)
        assert r.method is AnchorMethod.EXACT_SEARCH
        assert r.start - s.position.start == 5
        assert r.end - s.position.end == 5
        assert new[r.start:r.end] == s.quote.exact

    def test_exact_search_tie_breaks_toward_smaller_offset(self):
        # "needle" at offsets 0 and 14; hint at 7 is equidistant.
        text = "needle........needle"
        s = SelectorSet(
            quote=TextQuoteSelector(exact="needle"),
            position=TextPositionSelector(start=7, end=13),
            page_index=0,
        )
        r = anchor(text, s)
        assert r.method is AnchorMethod.EXACT_SEARCH
        assert r.start == 0

    def test_single_substitution_recovered_fuzzy(self):
        quote = "collaborative reading"
        old = "about " + quote + " platforms"
        s = describe(old, 6, 6 + len(quote))
        new = "about " + "collaborative rXading" + " platforms"
        r = anchor(new, s)
        assert r.method is AnchorMethod.FUZZY
        oracle = fuzzy_oracle(new, quote, s.position.start)
        assert oracle is not None
        assert (r.start, r.end) == (oracle[0], oracle[1])
        assert oracle[2] == 1
        assert r.score == pytest.approx(1.0 - 1 / len(quote))

    def test_fuzzy_rejects_past_budget(self):
        s = SelectorSet(
            quote=TextQuoteSelector(exact="zzzzzzzzzz"),
            position=TextPositionSelector(start=0, end=10),
            page_index=0,
        )
        with pytest.raises(AnchorFailed):
            anchor("completely unrelated text body", s)

    def test_anchor_on_multipage_document(self):
        pages = ("page one text here", "page two text here")
        s = describe(pages, 24, 27)  # "two"
        r = anchor(pages, s)
        assert r.method is AnchorMethod.POSITION_VERIFIED
        assert PageText(pages).text[r.start:r.end] == "two"

    def test_unicode_offsets_count_scalars(self):
        text = "héllo 🌍 wörld, annotated"
        s = describe(text, 6, 7)
        assert s.quote.exact == "🌍"
        r = anchor(text, s)
        assert (r.start, r.end) == (6, 7)


class TestFuzzyAgainstOracle:
    @pytest.mark.parametrize("seed", range(40))
    def test_mutated_text_matches_oracle(self, seed):
        rng = random.Random(seed)
        text = random_text(rng, rng.randint(80, 220))
        start = rng.randrange(0, len(text) - 20)
        end = start + rng.randint(10, min(20, len(text) - start))
        s = describe(text, start, end)
        mutated = mutate(rng, text, start, end)
        oracle = fuzzy_oracle(mutated, s.quote.exact, s.position.start)
        if s.quote.exact in mutated:
            r = anchor(mutated, s)
            assert r.score == 1.0
            return
        if oracle is None:
            with pytest.raises(AnchorFailed):
                anchor(mutated, s)
            return
        r = anchor(mutated, s)
        assert r.method is AnchorMethod.FUZZY
        assert (r.start, r.end, round((1 - r.score) * len(s.quote.exact))) == oracle

    def test_determinism(self):
        rng = random.Random(7)
        text = random_text(rng, 150)
        s = describe(text, 30, 48)
        mutated = text[:35] + "Q" + text[36:]
        first = anchor(mutated, s)
        for _ in range(3):
            assert anchor(mutated, s) == first


def mutate(rng: random.Random, text: str, start: int, end: int) -> str:
    """Apply 1..3 random single-char edits inside and around the quote."""
    chars = list(text)
    for _ in range(rng.randint(1, 3)):
        kind = rng.choice(("sub", "ins", "del"))
        pos = rng.randrange(max(0, start - 5), min(len(chars), end + 5))
        if kind == "sub" and pos < len(chars):
            chars[pos] = "Q"
        elif kind == "ins":
            chars.insert(pos, "Z")
        elif chars and pos < len(chars):
            del chars[pos]
    return "".join(chars)


class TestRoundTripProperty:
    @settings(max_examples=200, deadline=None)
    @given(st.data())
    def test_describe_then_anchor_is_identity(self, data):
        text = data.draw(st.text(alphabet=ALPHABET, min_size=2, max_size=200))
        start = data.draw(st.integers(0, len(text) - 1))
        end = data.draw(st.integers(start + 1, len(text)))
        s = describe(text, start, end)
        r = anchor(text, s)
        assert (r.start, r.end) == (start, end)
        assert r.score == 1.0
        assert r.method is AnchorMethod.POSITION_VERIFIED

    def test_thousand_random_round_trips(self):
        rng = random.Random(123)
        for _ in range(1000):
            text = random_text(rng, rng.randint(10, 200))
            start = rng.randrange(0, len(text) - 1)
            end = rng.randint(start + 1, len(text))
            s = describe(text, start, end)
            r = anchor(text, s)
            assert (r.start, r.end, r.score) == (start, end, 1.0)


class TestReanchorAll:
    class FakeComm:
        def __init__(self, cid, anchor_):
            self.commentary_id = cid
            self.anchor = anchor_

    def test_identical_text_all_position_verified(self):
        text = "para one.\n\npara two here.\n\npara three."
        comms = [
            self.FakeComm("a", describe(text, 0, 8)),
            self.FakeComm("b", describe(text, 11, 19)),
            self.FakeComm("doc-level", None),
        ]
        report = reanchor_all(text, text, comms)
        assert not report.orphaned
        assert all(
            i.result.method is AnchorMethod.POSITION_VERIFIED for i in report.reanchored
        )
        assert [i.status for i in report.items] == ["reanchored", "reanchored", "unanchored"]

    def test_deleted_paragraph_orphans_its_highlight(self):
        p1 = "first paragraph with words."
        p2 = "second paragraph to be removed entirely soon."
        p3 = "third paragraph stays put."
        old = "\n\n".join([p1, p2, p3])
        doomed = describe(old, old.index("removed"), old.index("removed") + 7)
        survivor = describe(old, old.index("third"), old.index("third") + 5)
        new = "\n\n".join([p1, p3])
        report = reanchor_all(old, new, [self.FakeComm("x", doomed), self.FakeComm("y", survivor)])
        assert [i.commentary_id for i in report.orphaned] == ["x"]
        (ok,) = report.reanchored
        assert new[ok.result.start:ok.result.end] == "third"
        assert ok.selectors is not None

    def test_whitespace_reflow_recovers_all(self):
        old = "Sentence one flows here. Sentence two follows. Sentence three ends."
        comms = [
            self.FakeComm("a", describe(old, 0, 12)),
            self.FakeComm("b", describe(old, 25, 46)),
        ]
        # Reflow doubles every space, displacing and perturbing both quotes.
        new = old.replace(" ", "  ")
        report = reanchor_all(old, new, comms)
        assert not report.orphaned
        for item in report.reanchored:
            assert item.result.method in (AnchorMethod.EXACT_SEARCH, AnchorMethod.FUZZY)
            assert item.result.score >= 0.8


class TestInvariantProperties:
    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_monotone_degradation(self, data):
        # Edits outside the quoted region, with offsets preserved, never
        # degrade a position-verified anchor below score 1.0.
        text = data.draw(st.text(alphabet=ALPHABET, min_size=20, max_size=120))
        start = data.draw(st.integers(5, len(text) - 10))
        end = data.draw(st.integers(start + 1, min(start + 8, len(text))))
        s = describe(text, start, end)
        assert anchor(text, s).method is AnchorMethod.POSITION_VERIFIED
        # Substitute characters strictly before/after the range (same length).
        before = data.draw(st.integers(0, start - 1))
        after = data.draw(st.integers(end, len(text) - 1))
        chars = list(text)
        chars[before] = "Q"
        if after >= end:
            chars[after] = "Q"
        mutated = "".join(chars)
        assert mutated[start:end] == s.quote.exact
        r = anchor(mutated, s)
        assert r.score == 1.0
        assert (r.start, r.end) == (start, end)

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_fuzzy_never_exceeds_budget(self, data):
        text = data.draw(st.text(alphabet="abcd", min_size=8, max_size=60))
        quote = data.draw(st.text(alphabet="abcdZ", min_size=3, max_size=12))
        s = SelectorSet(
            quote=TextQuoteSelector(exact=quote),
            position=TextPositionSelector(start=0, end=len(quote)),
            page_index=0,
        )
        try:
            r = anchor(text, s)
        except AnchorFailed:
            return
        if r.method is AnchorMethod.FUZZY:
            distance = round((1 - r.score) * len(quote))
            assert distance <= fuzzy_budget(len(quote))

    def test_score_one_unless_fuzzy(self):
        with pytest.raises(ValueError):
            from care.anchoring import AnchorResult

            AnchorResult(0, 1, AnchorMethod.EXACT_SEARCH, 0.5)
