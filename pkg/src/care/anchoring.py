"""Selector computation and re-location of highlights in document text.

A highlight is described by three redundant selectors (quote with context,
character position, page index) and re-located by a three-stage cascade:
position check, exact-quote search, then fuzzy matching under an edit
distance budget. Offsets are character offsets (Unicode scalar values)
into the concatenation of per-page text joined with a single "\\n".

All functions here are pure; batch re-anchoring is safe to parallelize.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

# Context captured around a quote, in characters.
CONTEXT_CHARS = 32
# Fraction of the quote length allowed as edit distance in fuzzy matching;
# also bounds the fuzzy window length slack.
FUZZY_BUDGET_FRACTION = 0.2

PAGE_JOINER = "\n"


class SelectorError(ValueError):
    """Malformed selector or out-of-bounds range."""


class AnchorFailed(Exception):
    """The cascade exhausted all stages without an acceptable match."""


class AnchorMethod(str, Enum):
    POSITION_VERIFIED = "position_verified"
    EXACT_SEARCH = "exact_search"
    FUZZY = "fuzzy"


@dataclass(frozen=True, slots=True)
class TextQuoteSelector:
    exact: str
    prefix: str = ""
    suffix: str = ""

    def __post_init__(self) -> None:
        if not self.exact:
            raise SelectorError("quote selector needs non-empty exact text")


@dataclass(frozen=True, slots=True)
class TextPositionSelector:
    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end <= self.start:
            raise SelectorError(f"invalid position range ({self.start}, {self.end})")


@dataclass(frozen=True, slots=True)
class SelectorSet:
    quote: TextQuoteSelector
    position: TextPositionSelector
    page_index: int

    def __post_init__(self) -> None:
        if self.page_index < 0:
            raise SelectorError("page_index must be >= 0")


@dataclass(frozen=True, slots=True)
class AnchorResult:
    start: int
    end: int
    method: AnchorMethod
    score: float

    def __post_init__(self) -> None:
        if self.method != AnchorMethod.FUZZY and self.score != 1.0:
            raise ValueError("score must be 1.0 unless method is fuzzy")


class PageText:
    """Per-page text with offsets over the joined document text.

    Pages are joined with a single newline; the joiner character belongs to
    the page it follows for page_of() purposes.
    """

    __slots__ = ("pages", "text", "_page_starts")

    def __init__(self, pages: Sequence[str]):
        if isinstance(pages, str):
            pages = [pages]
        if not pages:
            raise SelectorError("document text needs at least one page")
        self.pages = tuple(pages)
        self.text = PAGE_JOINER.join(self.pages)
        starts = [0]
        for page in self.pages[:-1]:
            starts.append(starts[-1] + len(page) + len(PAGE_JOINER))
        self._page_starts = starts

    def __len__(self) -> int:
        return len(self.text)

    def page_of(self, offset: int) -> int:
        if offset < 0 or offset > len(self.text):
            raise SelectorError(f"offset {offset} outside document text")
        return max(0, bisect_right(self._page_starts, offset) - 1)


def _as_pages(text: str | Sequence[str] | PageText) -> PageText:
    if isinstance(text, PageText):
        return text
    return PageText(text)


def fuzzy_budget(exact_len: int) -> int:
    return math.ceil(FUZZY_BUDGET_FRACTION * exact_len)


def describe(text: str | Sequence[str] | PageText, start: int, end: int) -> SelectorSet:
    """Build the selector set for the range [start, end) of the document text."""
    doc = _as_pages(text)
    if start < 0 or end > len(doc.text) or end <= start:
        raise SelectorError(f"range ({start}, {end}) out of bounds for text of length {len(doc.text)}")
    return SelectorSet(
        quote=TextQuoteSelector(
            exact=doc.text[start:end],
            prefix=doc.text[max(0, start - CONTEXT_CHARS):start],
            suffix=doc.text[end:end + CONTEXT_CHARS],
        ),
        position=TextPositionSelector(start=start, end=end),
        page_index=doc.page_of(start),
    )


def anchor(text: str | Sequence[str] | PageText, selectors: SelectorSet) -> AnchorResult:
    """Re-locate a selector set in (possibly drifted) document text.

    Cascade:
      1. position_verified -- the stored range still holds the exact quote.
      2. exact_search -- the quote occurs verbatim elsewhere; the occurrence
         closest to the stored start wins, ties toward the smaller offset.
      3. fuzzy -- best window within the edit distance budget
         ceil(0.2 * len(exact)); score = 1 - distance / len(exact).

    Raises AnchorFailed when every stage misses. Tie-breaks are total, so
    identical inputs always produce identical results.
    """
    doc = _as_pages(text)
    body = doc.text
    exact = selectors.quote.exact
    start, end = selectors.position.start, selectors.position.end

    if body[start:end] == exact:
        return AnchorResult(start, end, AnchorMethod.POSITION_VERIFIED, 1.0)

    occurrences = _find_all(body, exact)
    if occurrences:
        best = min(occurrences, key=lambda s: (abs(s - start), s))
        return AnchorResult(best, best + len(exact), AnchorMethod.EXACT_SEARCH, 1.0)

    found = _best_fuzzy_window(body, exact, hint=start)
    if found is None:
        raise AnchorFailed(f"no window within edit distance {fuzzy_budget(len(exact))} of the quote")
    w_start, w_end, distance = found
    return AnchorResult(w_start, w_end, AnchorMethod.FUZZY, 1.0 - distance / len(exact))


def _find_all(body: str, needle: str) -> list[int]:
    out = []
    pos = body.find(needle)
    while pos != -1:
        out.append(pos)
        pos = body.find(needle, pos + 1)
    return out


def _codepoints(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32)


def _substring_distance_rows(pattern: str, body: str) -> np.ndarray:
    """Row DP: result[j] = min edit distance of pattern vs any body substring ending at j.

    Free start (row 0 is all zeros) and free end (caller minimizes over the
    final row). The horizontal dependency cur[j-1] + 1 is resolved with a
    cumulative-minimum scan: cur[j] = min_k<=j (t[k] + j - k).
    """
    m = len(pattern)
    n = len(body)
    body_arr = _codepoints(body)
    offsets = np.arange(n + 1, dtype=np.int64)
    prev = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, m + 1):
        p = ord(pattern[i - 1])
        t = np.empty(n + 1, dtype=np.int64)
        t[0] = i
        np.minimum(prev[1:] + 1, prev[:-1] + (body_arr != p), out=t[1:])
        cur = np.minimum.accumulate(t - offsets) + offsets
        prev = cur
    return prev


def _best_fuzzy_window(body: str, exact: str, hint: int) -> tuple[int, int, int] | None:
    """Best (start, end, distance) window for the quote, or None past the budget.

    The global minimum distance is found over all substrings; any substring
    achieving a distance d has length within len(exact) +- d, so a result
    inside the budget automatically respects the +-20% window slack. Among
    minimal-distance windows the start closest to the position hint wins,
    then the smaller start, then the shorter window.
    """
    m = len(exact)
    budget = fuzzy_budget(m)
    if not body:
        return None

    # Min distance per *start* via the reversed free-substring DP. The
    # final entry (start == len(body)) only admits the empty window, and
    # windows must have length >= 1, so it is dropped.
    per_start = _substring_distance_rows(exact[::-1], body[::-1])[::-1][:-1]
    best = int(per_start.min())
    if best > budget:
        return None
    starts = np.flatnonzero(per_start == best)
    s = int(min(starts, key=lambda x: (abs(int(x) - hint), int(x))))

    # Fix the start, pick the best (then smallest) end at least 1 past it.
    window = body[s:s + m + budget]
    row = _levenshtein_last_row(exact, window)
    e_rel = 1 + int(np.argmin(row[1:]))  # first occurrence, i.e. smallest end
    return s, s + e_rel, int(row[e_rel])


def _levenshtein_last_row(pattern: str, body: str) -> np.ndarray:
    """Last DP row of edit distance pattern vs every prefix of body."""
    n = len(body)
    body_arr = _codepoints(body) if n else np.empty(0, dtype=np.uint32)
    offsets = np.arange(n + 1, dtype=np.int64)
    prev = offsets.copy()
    for i in range(1, len(pattern) + 1):
        p = ord(pattern[i - 1])
        t = np.empty(n + 1, dtype=np.int64)
        t[0] = i
        if n:
            np.minimum(prev[1:] + 1, prev[:-1] + (body_arr != p), out=t[1:])
        cur = np.minimum.accumulate(t - offsets) + offsets
        prev = cur
    return prev


@dataclass(frozen=True, slots=True)
class ReanchorItem:
    commentary_id: str
    status: str  # "reanchored" | "orphaned" | "unanchored"
    result: AnchorResult | None = None
    selectors: SelectorSet | None = None


@dataclass(frozen=True, slots=True)
class ReanchorReport:
    items: tuple[ReanchorItem, ...]

    @property
    def orphaned(self) -> tuple[ReanchorItem, ...]:
        return tuple(i for i in self.items if i.status == "orphaned")

    @property
    def reanchored(self) -> tuple[ReanchorItem, ...]:
        return tuple(i for i in self.items if i.status == "reanchored")


def reanchor_all(
    old_text: str | Sequence[str] | PageText,
    new_text: str | Sequence[str] | PageText,
    commentaries: Sequence,
) -> ReanchorReport:
    """Resolve every anchored commentary against the new text.

    Failures are flagged per item as orphaned; nothing is deleted.
    Document-level commentaries pass through as "unanchored". Successful
    items carry a freshly described selector set for the new text.
    """
    del old_text  # anchors carry everything needed; kept for call-site clarity
    doc_new = _as_pages(new_text)
    items: list[ReanchorItem] = []
    for c in commentaries:
        if c.anchor is None:
            items.append(ReanchorItem(c.commentary_id, "unanchored"))
            continue
        try:
            result = anchor(doc_new, c.anchor)
        except AnchorFailed:
            items.append(ReanchorItem(c.commentary_id, "orphaned"))
            continue
        fresh = describe(doc_new, result.start, result.end)
        items.append(ReanchorItem(c.commentary_id, "reanchored", result=result, selectors=fresh))
    return ReanchorReport(tuple(items))
