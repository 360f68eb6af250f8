"""Hardness-aware prompt synthesis: instantiate, estimate, bucket.

Base instructions are crossed with slot templates to produce prompts
carrying machine-checkable constraint specs. A generation client then
samples k completions per prompt; the fraction passing verification
buckets the prompt into discarded / hard / easy / pass-only. All
sampling is driven by a digest-seeded generator, so a full run is a
deterministic function of (seeds, templates, master seed, client script).
"""

from __future__ import annotations

import hashlib
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from . import textstat
from .constraints import (
    ConstraintItem,
    ConstraintKind,
    ConstraintSpec,
    spec_from_dict,
    spec_to_dict,
    verify,
)
from .errors import (
    ClientError,
    EmptyBaseError,
    InvalidSpecError,
    RatioOutOfRangeError,
    SchemaError,
    UnsatisfiableTemplateError,
)
from .model_client import GenerationClient, GenerationRequest

TEMPLATES_SCHEMA_VERSION = "templates_v1"
MANIFEST_SCHEMA_VERSION = "synthesis_manifest_v1"
RENDER_VERSION = "render_v1"

DEFAULT_K = 10
DEFAULT_TEMPLATES_PER_BASE = 5
# Sampling settings for pass-ratio estimation are deliberately plain
# config, not opinionated constants: which model filters prompts and how
# it samples belongs to the caller.
DEFAULT_MAX_TOKENS = 1024
DEFAULT_TEMPERATURE = 1.0
DISCARD_BELOW = 0.05
HARD_UPPER = 0.1
EASY_UPPER = 0.9

_SAMPLING_RETRIES = 20


class Bucket(str, Enum):
    UNFILTERED = "unfiltered"
    DISCARDED = "discarded"
    PASS = "pass"
    EASY = "easy"
    HARD = "hard"


@dataclass(frozen=True)
class SlotSpec:
    """Sampling recipe for one constraint item."""

    kind: ConstraintKind
    keywords: tuple[str, ...] = ()
    count_lo: int = 1
    count_hi: int = 1
    patterns: tuple[str, ...] = ()

    def validate(self) -> None:
        if self.kind in (
            ConstraintKind.KEYWORD_RANGE,
            ConstraintKind.KEYWORD_AT_MOST,
            ConstraintKind.KEYWORD_AT_LEAST,
            ConstraintKind.KEYWORD_EXACT,
        ) and not self.keywords:
            raise InvalidSpecError(f"{self.kind.value} slot needs a keyword pool")
        if self.kind in (ConstraintKind.BEGIN_MATCH, ConstraintKind.END_MATCH) and not self.patterns:
            raise InvalidSpecError(f"{self.kind.value} slot needs a pattern pool")
        if self.count_lo < 0 or self.count_lo > self.count_hi:
            raise InvalidSpecError(
                f"{self.kind.value} slot needs 0 <= count_lo <= count_hi, "
                f"got [{self.count_lo}, {self.count_hi}]"
            )


@dataclass(frozen=True)
class InstructionTemplate:
    template_id: str
    slots: tuple[SlotSpec, ...]
    language: str = "en"

    def validate(self) -> None:
        if not self.template_id:
            raise InvalidSpecError("template_id must be non-empty")
        if not self.slots:
            raise InvalidSpecError("template needs at least one slot")
        for slot in self.slots:
            slot.validate()


@dataclass(frozen=True)
class PromptRecord:
    prompt_id: str
    base_instruction: str
    rendered_prompt: str
    spec: ConstraintSpec
    pass_ratio: float | None = None
    bucket: Bucket = Bucket.UNFILTERED


_CLAUSES_EN = {
    ConstraintKind.KEYWORD_RANGE: 'Use the keyword "{keyword}" between {n_min} and {n_max} times.',
    ConstraintKind.KEYWORD_AT_MOST: 'Use the keyword "{keyword}" at most {n_min} times.',
    ConstraintKind.KEYWORD_AT_LEAST: 'Use the keyword "{keyword}" at least {n_max} times.',
    ConstraintKind.KEYWORD_EXACT: 'Use the keyword "{keyword}" exactly {n_exact} times.',
    ConstraintKind.PARAGRAPH_EXACT: "Write exactly {n_exact} paragraphs, separated by blank lines.",
    ConstraintKind.SENTENCE_EXACT: "Write exactly {n_exact} sentences.",
    ConstraintKind.WORD_RANGE: "Use between {n_min} and {n_max} words.",
    ConstraintKind.WORD_AT_MOST: "Use at most {n_min} words.",
    ConstraintKind.WORD_AT_LEAST: "Use at least {n_max} words.",
    ConstraintKind.BEGIN_MATCH: 'Begin your response with "{pattern}".',
    ConstraintKind.END_MATCH: 'End your response with "{pattern}".',
}

_CLAUSES_ZH = {
    ConstraintKind.KEYWORD_RANGE: "关键词“{keyword}”需出现 {n_min} 到 {n_max} 次。",
    ConstraintKind.KEYWORD_AT_MOST: "关键词“{keyword}”最多出现 {n_min} 次。",
    ConstraintKind.KEYWORD_AT_LEAST: "关键词“{keyword}”至少出现 {n_max} 次。",
    ConstraintKind.KEYWORD_EXACT: "关键词“{keyword}”需恰好出现 {n_exact} 次。",
    ConstraintKind.PARAGRAPH_EXACT: "全文需恰好包含 {n_exact} 个段落，段落之间用空行分隔。",
    ConstraintKind.SENTENCE_EXACT: "全文需恰好包含 {n_exact} 个句子。",
    ConstraintKind.WORD_RANGE: "全文字数需在 {n_min} 到 {n_max} 之间。",
    ConstraintKind.WORD_AT_MOST: "全文字数不得超过 {n_min}。",
    ConstraintKind.WORD_AT_LEAST: "全文字数不得少于 {n_max}。",
    ConstraintKind.BEGIN_MATCH: "回复必须以“{pattern}”开头。",
    ConstraintKind.END_MATCH: "回复必须以“{pattern}”结尾。",
}

_PREAMBLE = {
    "en": "Follow every one of these requirements:",
    "zh": "请同时满足以下全部要求：",
}


def render_clause(item: ConstraintItem, language: str = "en") -> str:
    """Human-readable statement of one constraint item."""
    table = _CLAUSES_ZH if language == "zh" else _CLAUSES_EN
    return table[item.kind].format(
        keyword=item.keyword,
        n_min=item.n_min,
        n_max=item.n_max,
        n_exact=item.n_exact,
        pattern=item.pattern,
    )


def render_prompt(base: str, spec: ConstraintSpec) -> str:
    lines = [base, "", _PREAMBLE.get(spec.language, _PREAMBLE["en"])]
    for idx, item in enumerate(spec.items, start=1):
        lines.append(f"{idx}. {render_clause(item, spec.language)}")
    return "\n".join(lines)


def _stable_rng(base: str, template_id: str, seed: int) -> random.Random:
    digest = hashlib.sha256(f"{template_id}\x1f{seed}\x1f{base}".encode("utf-8")).hexdigest()
    return random.Random(int(digest[:16], 16))


def _sample_item(slot: SlotSpec, rng: random.Random) -> ConstraintItem:
    kind = slot.kind
    keyword = rng.choice(slot.keywords) if slot.keywords else None
    if kind in (ConstraintKind.KEYWORD_RANGE, ConstraintKind.WORD_RANGE):
        for _ in range(_SAMPLING_RETRIES):
            n_min = rng.randint(slot.count_lo, slot.count_hi)
            n_max = rng.randint(slot.count_lo, slot.count_hi)
            if n_min <= n_max:
                return ConstraintItem(kind=kind, keyword=keyword, n_min=n_min, n_max=n_max)
        raise UnsatisfiableTemplateError(
            f"could not sample a valid range for {kind.value} "
            f"within {_SAMPLING_RETRIES} tries"
        )
    if kind in (ConstraintKind.KEYWORD_AT_MOST, ConstraintKind.WORD_AT_MOST):
        return ConstraintItem(kind=kind, keyword=keyword, n_min=rng.randint(slot.count_lo, slot.count_hi))
    if kind in (ConstraintKind.KEYWORD_AT_LEAST, ConstraintKind.WORD_AT_LEAST):
        return ConstraintItem(kind=kind, keyword=keyword, n_max=rng.randint(slot.count_lo, slot.count_hi))
    if kind in (ConstraintKind.KEYWORD_EXACT, ConstraintKind.PARAGRAPH_EXACT, ConstraintKind.SENTENCE_EXACT):
        return ConstraintItem(kind=kind, keyword=keyword, n_exact=rng.randint(slot.count_lo, slot.count_hi))
    return ConstraintItem(kind=kind, pattern=rng.choice(slot.patterns))


def instantiate_template(base: str, template: InstructionTemplate, seed: int) -> PromptRecord:
    """Build a PromptRecord with slot values sampled deterministically.

    The same (base, template, seed) triple always yields byte-identical
    output."""
    if not base.strip():
        raise EmptyBaseError("base instruction must be non-empty")
    template.validate()
    rng = _stable_rng(base, template.template_id, seed)
    items = tuple(_sample_item(slot, rng) for slot in template.slots)
    prompt_id = hashlib.sha256(
        f"{template.template_id}\x1f{seed}\x1f{base}\x1fprompt".encode("utf-8")
    ).hexdigest()[:12]
    spec = ConstraintSpec(items=items, language=template.language, spec_id=prompt_id)
    spec.validate()
    return PromptRecord(
        prompt_id=prompt_id,
        base_instruction=base,
        rendered_prompt=render_prompt(base, spec),
        spec=spec,
    )


def estimate_pass_ratio(
    prompt: PromptRecord,
    client: GenerationClient,
    k: int = DEFAULT_K,
    *,
    max_tokens: int = DEFAULT_MAX_TOKENS,
    temperature: float = DEFAULT_TEMPERATURE,
) -> float:
    """Fraction of k sampled completions whose answers satisfy the spec."""
    if k < 1:
        raise RatioOutOfRangeError(f"k must be >= 1, got {k}")
    request = GenerationRequest(
        prompt=prompt.rendered_prompt, n=k, max_tokens=max_tokens, temperature=temperature
    )
    try:
        response = client.generate(request)
    except ClientError as exc:
        raise ClientError(f"prompt {prompt.prompt_id}: {exc}") from exc
    passed = 0
    for completion in response.completions:
        split = textstat.extract_answer(completion)
        if verify(split.answer, prompt.spec).all_satisfied:
            passed += 1
    return passed / k


def bucket(ratio: float) -> Bucket:
    """Hardness bucket for a pass ratio.

    Below 0.05 the prompt is discarded; [0.05, 0.1] is hard (the 0.1
    boundary goes to hard); (0.1, 0.9] is easy; above 0.9 the prompt is
    kept but too easy for either training set (pass-only).
    """
    if not (0.0 <= ratio <= 1.0):
        raise RatioOutOfRangeError(f"ratio must lie in [0, 1], got {ratio}")
    if ratio < DISCARD_BELOW:
        return Bucket.DISCARDED
    if ratio <= HARD_UPPER:
        return Bucket.HARD
    if ratio <= EASY_UPPER:
        return Bucket.EASY
    return Bucket.PASS


@dataclass(frozen=True)
class SynthesisConfig:
    k: int = DEFAULT_K
    templates_per_base: int = DEFAULT_TEMPLATES_PER_BASE
    seed: int = 0
    max_in_flight: int = 4
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = DEFAULT_TEMPERATURE


@dataclass
class SynthesisOutcome:
    records: list[PromptRecord] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)


def synthesize_dataset(
    seeds: Sequence[str],
    templates: Sequence[InstructionTemplate],
    client: GenerationClient,
    config: SynthesisConfig,
    out_dir: str | Path,
) -> SynthesisOutcome:
    """Run the full instantiate -> estimate -> bucket pipeline.

    Writes pass.jsonl (every non-discarded prompt), easy.jsonl,
    hard.jsonl, and manifest.json into out_dir. Per-prompt client
    failures are recorded in the manifest instead of aborting the run.
    Estimation fans out over a bounded worker pool but results are
    aggregated in prompt order, so outputs are deterministic.
    """
    if not seeds or not templates:
        raise InvalidSpecError("synthesis needs at least one seed and one template")
    active = list(templates[: config.templates_per_base])
    prompts = [
        instantiate_template(base, template, config.seed)
        for base in seeds
        for template in active
    ]

    def estimate(record: PromptRecord):
        try:
            ratio = estimate_pass_ratio(
                record,
                client,
                config.k,
                max_tokens=config.max_tokens,
                temperature=config.temperature,
            )
            return ratio, None
        except ClientError as exc:
            return None, str(exc)

    with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
        results = list(pool.map(estimate, prompts))

    outcome = SynthesisOutcome()
    counts = {b.value: 0 for b in Bucket if b is not Bucket.UNFILTERED}
    for record, (ratio, error) in zip(prompts, results):
        if error is not None:
            outcome.errors.append({"prompt_id": record.prompt_id, "error": error})
            continue
        labelled = replace(record, pass_ratio=ratio, bucket=bucket(ratio))
        counts[labelled.bucket.value] += 1
        outcome.records.append(labelled)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_bucket_file(out / "pass.jsonl", outcome.records, exclude_discarded=True)
    _write_bucket_file(out / "easy.jsonl", [r for r in outcome.records if r.bucket is Bucket.EASY])
    _write_bucket_file(out / "hard.jsonl", [r for r in outcome.records if r.bucket is Bucket.HARD])

    manifest = {
        "schema": MANIFEST_SCHEMA_VERSION,
        "counts": {
            "total": len(prompts),
            "kept_pass": counts["pass"] + counts["easy"] + counts["hard"],
            **counts,
            "errors": len(outcome.errors),
        },
        "k": config.k,
        "seed": config.seed,
        "templates_per_base": config.templates_per_base,
        "max_tokens": config.max_tokens,
        "temperature": config.temperature,
        "template_ids": [t.template_id for t in active],
        "client_config_digest": client.config_digest(),
        "render_version": RENDER_VERSION,
        "errors": outcome.errors,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")
    outcome.manifest = manifest
    return outcome


def _write_bucket_file(path: Path, records: Sequence[PromptRecord], exclude_discarded: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            if exclude_discarded and record.bucket is Bucket.DISCARDED:
                continue
            fh.write(json.dumps(prompt_record_to_dict(record), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def prompt_record_to_dict(record: PromptRecord) -> dict:
    return {
        "prompt_id": record.prompt_id,
        "base_instruction": record.base_instruction,
        "rendered_prompt": record.rendered_prompt,
        "spec": spec_to_dict(record.spec),
        "pass_ratio": record.pass_ratio,
        "bucket": record.bucket.value,
    }


def prompt_record_from_dict(obj: dict) -> PromptRecord:
    try:
        return PromptRecord(
            prompt_id=str(obj["prompt_id"]),
            base_instruction=str(obj["base_instruction"]),
            rendered_prompt=str(obj["rendered_prompt"]),
            spec=spec_from_dict(obj["spec"]),
            pass_ratio=obj.get("pass_ratio"),
            bucket=Bucket(obj.get("bucket", "unfiltered")),
        )
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"bad prompt record: {exc}") from exc


def slot_from_dict(obj: dict) -> SlotSpec:
    try:
        kind = ConstraintKind(obj["kind"])
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"bad slot kind: {obj.get('kind')!r}") from exc
    slot = SlotSpec(
        kind=kind,
        keywords=tuple(obj.get("keywords", ())),
        count_lo=int(obj.get("count_lo", 1)),
        count_hi=int(obj.get("count_hi", 1)),
        patterns=tuple(obj.get("patterns", ())),
    )
    slot.validate()
    return slot


def template_from_dict(obj: dict) -> InstructionTemplate:
    template = InstructionTemplate(
        template_id=str(obj.get("template_id", "")),
        slots=tuple(slot_from_dict(s) for s in obj.get("slots", [])),
        language=obj.get("language", "en"),
    )
    template.validate()
    return template


def load_templates(path: str | Path) -> list[InstructionTemplate]:
    """Read a templates_v1 JSON file: {"schema": ..., "templates": [...]}."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid templates JSON in {path}: {exc}") from exc
    if obj.get("schema") != TEMPLATES_SCHEMA_VERSION:
        raise SchemaError(f"unsupported templates schema {obj.get('schema')!r}")
    return [template_from_dict(t) for t in obj.get("templates", [])]


def load_seeds(path: str | Path) -> list[str]:
    """Read base instructions, one per non-empty line."""
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]
