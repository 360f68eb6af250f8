"""Independent oracles and generators shared by the test suite.

Everything here deliberately re-derives behaviour through a different
route than the library (naive scans, numpy quantiles, scipy softmax) so
tests check the implementation against independent computations, not
against itself.
"""

from __future__ import annotations

import numpy as np

from ifengine.constraints import ConstraintKind, ConstraintSpec, verify
from ifengine.textstat import count_words

_CJK_RANGES = (
    (0x3400, 0x4DBF),
    (0x4E00, 0x9FFF),
    (0xF900, 0xFAFF),
    (0x20000, 0x2EBEF),
    (0x30000, 0x3134F),
)

_APOSTROPHES = {"'", "’"}


def _oracle_is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def _oracle_is_run_char(ch: str) -> bool:
    if ch in _APOSTROPHES:
        return True
    return ch.isalnum() and ch != "_" and not _oracle_is_cjk(ch)


def word_count_oracle(text: str) -> int:
    """Naive character-class scan: CJK char = 1 unit, alnum run = 1 unit."""
    count = 0
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if _oracle_is_cjk(ch):
            count += 1
            i += 1
        elif _oracle_is_run_char(ch):
            j = i
            has_alnum = False
            while j < n and _oracle_is_run_char(text[j]) and not _oracle_is_cjk(text[j]):
                if text[j] not in _APOSTROPHES:
                    has_alnum = True
                j += 1
            if has_alnum:
                count += 1
            i = j
        else:
            i += 1
    return count


_TERMINATORS = set(".!?。！？…")


def sentence_count_oracle(text: str) -> int:
    """Terminator scan with the decimal-number exclusion, written naively."""
    segments = []
    current = []
    for i, ch in enumerate(text):
        if ch in _TERMINATORS:
            is_decimal_dot = (
                ch == "."
                and i > 0
                and i + 1 < len(text)
                and text[i - 1].isdigit()
                and text[i + 1].isdigit()
            )
            if is_decimal_dot:
                current.append(ch)
                continue
            segments.append("".join(current))
            current = []
        else:
            current.append(ch)
    segments.append("".join(current))
    return sum(1 for seg in segments if seg.strip())


def keyword_count_oracle(text: str, keyword: str, case_sensitive: bool = True) -> int:
    """Brute-force position scan replicating the documented match rules."""
    hay, needle = (text, keyword) if case_sensitive else (text.casefold(), keyword.casefold())
    substring_mode = any(_oracle_is_cjk(ch) for ch in keyword)
    count = 0
    i = 0
    while i + len(needle) <= len(hay):
        if hay[i : i + len(needle)] != needle:
            i += 1
            continue
        if substring_mode:
            count += 1
            i += len(needle)
            continue
        left = hay[i - 1] if i > 0 else ""
        right = hay[i + len(needle)] if i + len(needle) < len(hay) else ""

        def blocked(ch):
            return ch != "" and ch.isalnum() and ch != "_" and not _oracle_is_cjk(ch)

        if not blocked(left) and not blocked(right):
            count += 1
            i += len(needle)
        else:
            i += 1
    return count


def selection_oracle(batch, r_percent: float, alpha: float):
    """Sort-and-cut selection: numpy quantile threshold, strict cut,
    ties padded in (sample_id, position) order to round(N*r/100)."""
    scores = np.array([rec.nll - alpha * rec.entropy for rec in batch], dtype=np.float64)
    q = 1.0 - r_percent / 100.0
    threshold = float(np.quantile(scores, q, method="linear"))
    target = round(len(batch) * r_percent / 100.0)
    selected = {rec.key for rec, s in zip(batch, scores) if s > threshold}
    if len(selected) < target:
        for key in sorted(rec.key for rec, s in zip(batch, scores) if s == threshold):
            if len(selected) >= target:
                break
            selected.add(key)
    return threshold, selected


def pick_filler(keywords) -> str:
    for candidate in ("zoq", "vrn", "plik", "womble"):
        if all(candidate != kw and kw not in candidate for kw in keywords):
            return candidate
    raise ValueError("no safe filler word available")


def build_satisfying_answer(spec: ConstraintSpec) -> str:
    """Construct a text satisfying every item of the spec (small counts).

    Raises if the constructed answer fails verification, so template
    feasibility problems surface as loud test failures."""
    begin = next((i.pattern for i in spec.items if i.kind == ConstraintKind.BEGIN_MATCH), None)
    end = next((i.pattern for i in spec.items if i.kind == ConstraintKind.END_MATCH), None)

    kw_targets: list[tuple[str, int]] = []
    paragraphs = 1
    sentences = None
    word_lo, word_hi = 0, None
    for item in spec.items:
        kind = item.kind
        if kind == ConstraintKind.KEYWORD_RANGE:
            kw_targets.append((item.keyword, item.n_min))
        elif kind == ConstraintKind.KEYWORD_AT_MOST:
            kw_targets.append((item.keyword, item.n_min))
        elif kind == ConstraintKind.KEYWORD_AT_LEAST:
            kw_targets.append((item.keyword, item.n_max))
        elif kind == ConstraintKind.KEYWORD_EXACT:
            kw_targets.append((item.keyword, item.n_exact))
        elif kind == ConstraintKind.PARAGRAPH_EXACT:
            paragraphs = item.n_exact
        elif kind == ConstraintKind.SENTENCE_EXACT:
            sentences = item.n_exact
        elif kind == ConstraintKind.WORD_RANGE:
            word_lo, word_hi = item.n_min, item.n_max
        elif kind == ConstraintKind.WORD_AT_MOST:
            word_hi = item.n_min
        elif kind == ConstraintKind.WORD_AT_LEAST:
            word_lo = item.n_max

    if paragraphs < 1:
        raise ValueError("cannot build an answer with zero paragraphs")
    if sentences is None:
        sentences = paragraphs
    if sentences < paragraphs:
        raise ValueError("fewer sentences than paragraphs is unsatisfiable")

    filler = pick_filler([kw for kw, _ in kw_targets])
    sentence_tokens: list[list[str]] = [[] for _ in range(sentences)]
    slot = 0
    for kw, target in kw_targets:
        for _ in range(target):
            sentence_tokens[slot % sentences].append(kw)
            slot += 1
    for tokens in sentence_tokens:
        if not tokens:
            tokens.append(filler)

    def assemble(extra_fillers: int) -> str:
        parts = [list(tokens) for tokens in sentence_tokens]
        parts[-1].extend([filler] * extra_fillers)
        texts = [" ".join(tokens) for tokens in parts]
        if begin:
            texts[0] = f"{begin} {texts[0]}"
        rendered = [f"{t}." for t in texts]
        if end:
            # The pattern supplies its own terminator or the trailing
            # unterminated segment counts as the final sentence.
            rendered[-1] = f"{texts[-1]} {end}"
        groups: list[list[str]] = [[] for _ in range(paragraphs)]
        for idx in range(paragraphs - 1):
            groups[idx].append(rendered[idx])
        groups[-1].extend(rendered[paragraphs - 1 :])
        return "\n\n".join(" ".join(g) for g in groups)

    extra = 0
    answer = assemble(extra)
    while count_words(answer) < word_lo:
        extra += word_lo - count_words(answer)
        answer = assemble(extra)
    if word_hi is not None and count_words(answer) > word_hi:
        raise ValueError(
            f"cannot satisfy word ceiling {word_hi} with a floor of {count_words(assemble(0))}"
        )

    report = verify(answer, spec)
    if not report.all_satisfied:
        failed = [r.item.kind.value for r in report.items if not r.satisfied]
        raise AssertionError(f"constructed answer violates {failed}:\n{answer}")
    return answer
