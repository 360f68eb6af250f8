"""Deterministic Unicode-aware text segmentation and counting primitives.

Everything in this module is a pure function of its string arguments, so
the counters can be called concurrently and replayed bit-for-bit. CJK
ideographs count as one word unit each and runs of non-CJK
letters/digits/apostrophes count as one unit, which lets Chinese and
English responses share a single set of counters without a tokenizer.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass

from .errors import EmptyKeywordError

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"

# Han ideograph blocks (BMP + supplementary planes). Kana and Hangul are
# deliberately excluded: only ideographs count as standalone word units.
_CJK_RANGES = (
    (0x3400, 0x4DBF),
    (0x4E00, 0x9FFF),
    (0xF900, 0xFAFF),
    (0x20000, 0x2EBEF),
    (0x30000, 0x3134F),
)

_CJK_CLASS = "".join(f"{chr(lo)}-{chr(hi)}" for lo, hi in _CJK_RANGES)
_APOSTROPHES = "'’"

# One match per word unit: a single ideograph, or a maximal run of
# non-CJK word characters (underscore excluded) and apostrophes.
_WORD_RE = re.compile(f"[{_CJK_CLASS}]|(?:[^\\W_{_CJK_CLASS}]|[{_APOSTROPHES}])+")

_SENTENCE_TERMINATORS = frozenset(".!?。！？…")


@dataclass(frozen=True)
class AnswerSplit:
    """A raw model response split into reasoning trace and final answer."""

    reasoning: str
    answer: str
    had_think_block: bool


def extract_answer(raw: str) -> AnswerSplit:
    """Split a response around its think-delimiters.

    The reasoning is the inner content of the first well-formed
    ``<think>...</think>`` block; the answer is everything after the last
    ``</think>``, with leading whitespace stripped. Text without a
    well-formed block comes back unchanged as the answer.
    """
    open_idx = raw.find(THINK_OPEN)
    if open_idx != -1:
        close_idx = raw.find(THINK_CLOSE, open_idx + len(THINK_OPEN))
        if close_idx != -1:
            reasoning = raw[open_idx + len(THINK_OPEN) : close_idx]
            last_close = raw.rfind(THINK_CLOSE)
            answer = raw[last_close + len(THINK_CLOSE) :].lstrip()
            return AnswerSplit(reasoning=reasoning, answer=answer, had_think_block=True)
    return AnswerSplit(reasoning="", answer=raw, had_think_block=False)


def is_cjk(ch: str) -> bool:
    """True for Han ideographs (the characters counted one-per-word)."""
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def count_words(text: str) -> int:
    """Count word units: one per ideograph, one per non-CJK alnum run.

    Runs may contain apostrophes ("don't" is one unit) but a run with no
    letter or digit is punctuation and counts as zero.
    """
    count = 0
    for match in _WORD_RE.finditer(text):
        token = match.group()
        if len(token) == 1 and token in _APOSTROPHES:
            continue
        if all(ch in _APOSTROPHES for ch in token):
            continue
        count += 1
    return count


def count_sentences(text: str) -> int:
    """Count segments ended by a sentence terminator or end-of-text.

    A '.' flanked by digits is part of a decimal number, not a
    terminator. A trailing non-empty segment with no terminator still
    counts as one sentence; segments containing only whitespace do not
    count.
    """
    count = 0
    has_content = False
    for idx, ch in enumerate(text):
        if ch in _SENTENCE_TERMINATORS:
            if (
                ch == "."
                and 0 < idx < len(text) - 1
                and text[idx - 1].isdigit()
                and text[idx + 1].isdigit()
            ):
                continue
            if has_content:
                count += 1
                has_content = False
        elif not ch.isspace():
            has_content = True
    if has_content:
        count += 1
    return count


def count_paragraphs(text: str) -> int:
    """Count maximal blocks of non-blank lines separated by blank lines."""
    count = 0
    in_block = False
    for line in text.split("\n"):
        if line.strip():
            if not in_block:
                count += 1
                in_block = True
        else:
            in_block = False
    return count


def _is_word_char(ch: str) -> bool:
    # Word characters for boundary purposes exclude ideographs: a CJK
    # neighbour starts a new word unit, so it never glues onto a Latin
    # keyword match.
    return ch.isalnum() and ch != "_" and not is_cjk(ch)


def count_keyword(text: str, keyword: str, case_sensitive: bool = True) -> int:
    """Count keyword occurrences.

    Keywords containing any CJK character are counted as plain substring
    matches (non-overlapping: the scan resumes after each match end).
    Purely non-CJK keywords match whole words only: both neighbours must
    be non-word characters or text boundaries.
    """
    if not keyword:
        raise EmptyKeywordError("keyword must be non-empty")
    haystack, needle = (text, keyword) if case_sensitive else (text.casefold(), keyword.casefold())
    substring_mode = any(is_cjk(ch) for ch in keyword)

    count = 0
    start = 0
    klen = len(needle)
    while True:
        idx = haystack.find(needle, start)
        if idx == -1:
            break
        if substring_mode:
            count += 1
            start = idx + klen
            continue
        left_ok = idx == 0 or not _is_word_char(haystack[idx - 1])
        right_ok = idx + klen == len(haystack) or not _is_word_char(haystack[idx + klen])
        if left_ok and right_ok:
            count += 1
            start = idx + klen
        else:
            start = idx + 1
    return count


def approx_token_count(text: str) -> int:
    """Cheap tokenizer-free token proxy: word units plus punctuation marks.

    Punctuation is anything in the Unicode P* categories. Only a proxy;
    consumers that need real token counts inject their own counter.
    """
    punct = sum(1 for ch in text if unicodedata.category(ch).startswith("P"))
    return count_words(text) + punct
