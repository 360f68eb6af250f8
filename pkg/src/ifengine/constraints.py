"""Constraint specs, response verification, and the dense/sparse reward schedule.

A ConstraintSpec is an ordered list of verifiable constraint items
(keyword counts, word/sentence/paragraph counts, begin/end patterns).
Verification measures each item against a response with the textstat
counters; the reward layer converts a verification report into either a
dense per-item partial-credit score or a sparse all-or-nothing score.

Item reward values are exact multiples of 0.01, so all accumulation is
done in integer hundredths and only converted to float at the end. This
keeps achieved/max sums and the normalized correctness score bit-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from . import textstat
from .errors import InvalidSpecError, SchemaError

SPEC_SCHEMA_VERSION = "spec_v1"

BONUS_CENTS = 100


class ConstraintKind(str, Enum):
    KEYWORD_RANGE = "KeywordRange"
    KEYWORD_AT_MOST = "KeywordAtMost"
    KEYWORD_AT_LEAST = "KeywordAtLeast"
    KEYWORD_EXACT = "KeywordExact"
    PARAGRAPH_EXACT = "ParagraphExact"
    SENTENCE_EXACT = "SentenceExact"
    WORD_RANGE = "WordRange"
    WORD_AT_MOST = "WordAtMost"
    WORD_AT_LEAST = "WordAtLeast"
    BEGIN_MATCH = "BeginMatch"
    END_MATCH = "EndMatch"


_KEYWORD_KINDS = frozenset(
    {
        ConstraintKind.KEYWORD_RANGE,
        ConstraintKind.KEYWORD_AT_MOST,
        ConstraintKind.KEYWORD_AT_LEAST,
        ConstraintKind.KEYWORD_EXACT,
    }
)
_RANGE_KINDS = frozenset({ConstraintKind.KEYWORD_RANGE, ConstraintKind.WORD_RANGE})
_AT_MOST_KINDS = frozenset({ConstraintKind.KEYWORD_AT_MOST, ConstraintKind.WORD_AT_MOST})
_AT_LEAST_KINDS = frozenset({ConstraintKind.KEYWORD_AT_LEAST, ConstraintKind.WORD_AT_LEAST})
_EXACT_KINDS = frozenset(
    {
        ConstraintKind.KEYWORD_EXACT,
        ConstraintKind.PARAGRAPH_EXACT,
        ConstraintKind.SENTENCE_EXACT,
    }
)
_PATTERN_KINDS = frozenset({ConstraintKind.BEGIN_MATCH, ConstraintKind.END_MATCH})


@dataclass(frozen=True)
class ConstraintItem:
    kind: ConstraintKind
    keyword: str | None = None
    n_min: int | None = None
    n_max: int | None = None
    n_exact: int | None = None
    pattern: str | None = None

    def validate(self) -> None:
        kind = self.kind
        if kind in _KEYWORD_KINDS and not self.keyword:
            raise InvalidSpecError(f"{kind.value} requires a non-empty keyword")
        if kind in _RANGE_KINDS:
            if self.n_min is None or self.n_max is None:
                raise InvalidSpecError(f"{kind.value} requires n_min and n_max")
            if self.n_min < 0 or self.n_min > self.n_max:
                raise InvalidSpecError(f"{kind.value} requires 0 <= n_min <= n_max")
        if kind in _AT_MOST_KINDS and (self.n_min is None or self.n_min < 0):
            raise InvalidSpecError(f"{kind.value} requires a nonnegative n_min bound")
        if kind in _AT_LEAST_KINDS and (self.n_max is None or self.n_max < 0):
            raise InvalidSpecError(f"{kind.value} requires a nonnegative n_max bound")
        if kind in _EXACT_KINDS and (self.n_exact is None or self.n_exact < 0):
            raise InvalidSpecError(f"{kind.value} requires a nonnegative n_exact")
        if kind in _PATTERN_KINDS and not self.pattern:
            raise InvalidSpecError(f"{kind.value} requires a non-empty pattern")


@dataclass(frozen=True)
class ConstraintSpec:
    items: tuple[ConstraintItem, ...]
    language: str = "en"
    spec_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def validate(self) -> None:
        if not self.items:
            raise InvalidSpecError("spec must contain at least one item")
        if self.language not in ("zh", "en"):
            raise InvalidSpecError(f"unsupported language {self.language!r}")
        for item in self.items:
            item.validate()
        for kind in (ConstraintKind.BEGIN_MATCH, ConstraintKind.END_MATCH):
            if sum(1 for i in self.items if i.kind == kind) > 1:
                raise InvalidSpecError(f"at most one {kind.value} item allowed")


@dataclass(frozen=True)
class ItemResult:
    item: ConstraintItem
    measured_value: int | bool
    satisfied: bool


@dataclass(frozen=True)
class VerificationReport:
    items: tuple[ItemResult, ...]
    all_satisfied: bool


@dataclass(frozen=True)
class RewardBreakdown:
    per_item_rewards: tuple[float, ...]
    bonus: float
    achieved_sum: float
    max_sum: float
    r_c: float


def item_reward_cents(item: ConstraintItem) -> int:
    """Reward value of one constraint item, in integer hundredths."""
    item.validate()
    kind = item.kind
    if kind == ConstraintKind.KEYWORD_RANGE:
        return 10 if item.n_max < 5 else 20
    if kind in (ConstraintKind.KEYWORD_AT_MOST, ConstraintKind.KEYWORD_AT_LEAST):
        return 5
    if kind == ConstraintKind.KEYWORD_EXACT:
        return 10
    if kind == ConstraintKind.PARAGRAPH_EXACT:
        return 10
    if kind == ConstraintKind.SENTENCE_EXACT:
        return 20
    if kind == ConstraintKind.WORD_RANGE:
        delta = item.n_max - item.n_min
        return 10 if delta > 50 else 20
    if kind in (ConstraintKind.WORD_AT_MOST, ConstraintKind.WORD_AT_LEAST):
        return 5
    return 2  # BeginMatch / EndMatch


def item_reward(item: ConstraintItem) -> float:
    return item_reward_cents(item) / 100.0


def _evaluate(answer: str, item: ConstraintItem, case_sensitive: bool) -> ItemResult:
    kind = item.kind
    if kind in _KEYWORD_KINDS:
        measured = textstat.count_keyword(answer, item.keyword, case_sensitive)
    elif kind == ConstraintKind.PARAGRAPH_EXACT:
        measured = textstat.count_paragraphs(answer)
    elif kind == ConstraintKind.SENTENCE_EXACT:
        measured = textstat.count_sentences(answer)
    elif kind in (ConstraintKind.WORD_RANGE, ConstraintKind.WORD_AT_MOST, ConstraintKind.WORD_AT_LEAST):
        measured = textstat.count_words(answer)
    elif kind == ConstraintKind.BEGIN_MATCH:
        measured = answer.lstrip().startswith(item.pattern)
        return ItemResult(item, measured, measured)
    else:  # EndMatch
        measured = answer.rstrip().endswith(item.pattern)
        return ItemResult(item, measured, measured)

    if kind in _RANGE_KINDS:
        satisfied = item.n_min <= measured <= item.n_max
    elif kind in _AT_MOST_KINDS:
        satisfied = measured <= item.n_min
    elif kind in _AT_LEAST_KINDS:
        satisfied = measured >= item.n_max
    else:
        satisfied = measured == item.n_exact
    return ItemResult(item, measured, satisfied)


def verify(answer: str, spec: ConstraintSpec, *, case_sensitive: bool = True) -> VerificationReport:
    """Evaluate every item of the spec against the answer text.

    The spec is validated up front, before any counting runs."""
    spec.validate()
    results = tuple(_evaluate(answer, item, case_sensitive) for item in spec.items)
    return VerificationReport(items=results, all_satisfied=all(r.satisfied for r in results))


def dense_reward(report: VerificationReport) -> RewardBreakdown:
    """Per-item partial credit plus a +1.00 bonus when everything holds.

    r_c is the achieved sum normalized by the maximum attainable sum
    (all items satisfied plus the bonus), so it always lies in [0, 1].
    """
    achieved_cents = 0
    max_cents = BONUS_CENTS
    granted: list[float] = []
    for result in report.items:
        cents = item_reward_cents(result.item)
        max_cents += cents
        if result.satisfied:
            achieved_cents += cents
            granted.append(cents / 100.0)
        else:
            granted.append(0.0)
    bonus = 1.0 if report.all_satisfied else 0.0
    if report.all_satisfied:
        achieved_cents += BONUS_CENTS
    return RewardBreakdown(
        per_item_rewards=tuple(granted),
        bonus=bonus,
        achieved_sum=achieved_cents / 100.0,
        max_sum=max_cents / 100.0,
        r_c=achieved_cents / max_cents,
    )


def sparse_reward(report: VerificationReport) -> float:
    """All-or-nothing correctness signal."""
    return 1.0 if report.all_satisfied else 0.0


def item_to_dict(item: ConstraintItem) -> dict:
    out: dict = {"kind": item.kind.value}
    for key in ("keyword", "n_min", "n_max", "n_exact", "pattern"):
        value = getattr(item, key)
        if value is not None:
            out[key] = value
    return out


def item_from_dict(obj: dict) -> ConstraintItem:
    try:
        kind = ConstraintKind(obj["kind"])
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"bad constraint item kind: {obj.get('kind')!r}") from exc
    item = ConstraintItem(
        kind=kind,
        keyword=obj.get("keyword"),
        n_min=obj.get("n_min"),
        n_max=obj.get("n_max"),
        n_exact=obj.get("n_exact"),
        pattern=obj.get("pattern"),
    )
    item.validate()
    return item


def spec_to_dict(spec: ConstraintSpec) -> dict:
    return {
        "schema": SPEC_SCHEMA_VERSION,
        "spec_id": spec.spec_id,
        "language": spec.language,
        "items": [item_to_dict(i) for i in spec.items],
    }


def spec_from_dict(obj: dict) -> ConstraintSpec:
    if obj.get("schema", SPEC_SCHEMA_VERSION) != SPEC_SCHEMA_VERSION:
        raise SchemaError(f"unsupported spec schema {obj.get('schema')!r}")
    items = obj.get("items")
    if not isinstance(items, list):
        raise SchemaError("spec requires an 'items' list")
    spec = ConstraintSpec(
        items=tuple(item_from_dict(i) for i in items),
        language=obj.get("language", "en"),
        spec_id=obj.get("spec_id", ""),
    )
    spec.validate()
    return spec


def spec_to_json(spec: ConstraintSpec) -> str:
    return json.dumps(spec_to_dict(spec), ensure_ascii=False, sort_keys=True)


def spec_from_json(text: str) -> ConstraintSpec:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid spec JSON: {exc}") from exc
    return spec_from_dict(obj)


def report_to_dict(report: VerificationReport) -> dict:
    return {
        "all_satisfied": report.all_satisfied,
        "items": [
            {
                "kind": r.item.kind.value,
                "measured": r.measured_value,
                "satisfied": r.satisfied,
            }
            for r in report.items
        ],
    }


def breakdown_to_dict(breakdown: RewardBreakdown) -> dict:
    return {
        "per_item_rewards": list(breakdown.per_item_rewards),
        "bonus": breakdown.bonus,
        "achieved_sum": breakdown.achieved_sum,
        "max_sum": breakdown.max_sum,
        "r_c": breakdown.r_c,
    }
