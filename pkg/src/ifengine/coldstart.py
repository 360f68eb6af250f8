"""Cold-start sample filtering: correctness, thinking depth, fluency.

Candidates flow through three gates in a fixed order. Correctness runs
the code verifier on the final answer; the thinking check requires a
minimum reasoning length; the fluency check asks a judge model to score
the answer with a fixed template and keeps scores at or above the
cutoff. Survivors are ranked by reasoning length and the top N kept.
Every rejection produces an audit event, and judge failures reject the
sample rather than aborting the batch.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

from .constraints import verify
from .errors import (
    ClientError,
    EmptyFieldError,
    NoScoreFoundError,
    SchemaError,
    ScoreOutOfRangeError,
)
from .model_client import GenerationClient, GenerationRequest
from .synthesis import PromptRecord, prompt_record_from_dict, prompt_record_to_dict
from .textstat import AnswerSplit, approx_token_count, extract_answer

JUDGE_TEMPLATE_VERSION = "judge_template_v1"

DEFAULT_MIN_TOKENS = 1000
DEFAULT_MIN_SCORE = 8
DEFAULT_TOP_N = 2000

_SCORE_RE = re.compile(r"\[\[(-?\d+)\]\]")

STAGE_CORRECTNESS = "correctness"
STAGE_THINKING = "thinking"
STAGE_FLUENCY = "fluency"
STAGE_RANKING = "ranking"


@dataclass
class CandidateSample:
    sample_id: str
    prompt: PromptRecord
    raw_response: str
    split: AnswerSplit | None = None
    checks: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.split is None:
            self.split = extract_answer(self.raw_response)


@dataclass(frozen=True)
class AuditEvent:
    sample_id: str
    stage: str
    verdict: str
    reason: str


@dataclass
class ColdstartResult:
    kept: list[CandidateSample]
    audit: list[AuditEvent]


@dataclass(frozen=True)
class ColdstartConfig:
    min_tokens: int = DEFAULT_MIN_TOKENS
    min_score: int = DEFAULT_MIN_SCORE
    top_n: int = DEFAULT_TOP_N
    judge_retries: int = 1
    balance_languages: bool = False
    max_in_flight: int = 4
    template: str | None = None
    # Judge decoding settings are plain config; greedy by default so the
    # fluency verdicts replay.
    judge_max_tokens: int = 1024
    judge_temperature: float = 0.0


def thinking_check(
    split: AnswerSplit,
    min_tokens: int = DEFAULT_MIN_TOKENS,
    counter: Callable[[str], int] = approx_token_count,
) -> bool:
    """True iff the reasoning trace reaches min_tokens counter units."""
    return counter(split.reasoning) >= min_tokens


def load_judge_template(language: str = "en") -> str:
    """Packaged fluency-check template for the given language."""
    name = f"judge_template.{language}.txt"
    return resources.files("ifengine").joinpath("resources", name).read_text(encoding="utf-8")


def build_judge_prompt(question: str, answer: str, template: str | None = None) -> str:
    """Substitute <question> and <answer> into the judge template.

    Substitution is a single pass, so placeholder-looking text inside
    the question or answer is never re-expanded."""
    if not question:
        raise EmptyFieldError("question must be non-empty")
    if not answer:
        raise EmptyFieldError("answer must be non-empty")
    if template is None:
        template = load_judge_template()
    values = {"<question>": question, "<answer>": answer}
    return re.sub(r"<question>|<answer>", lambda m: values[m.group()], template)


def parse_judge_score(judge_output: str) -> int:
    """Score from the last double-bracketed integer in the judge output.

    Judges often restate the rubric's example before the verdict, so
    only the final [[n]] counts."""
    matches = _SCORE_RE.findall(judge_output)
    if not matches:
        raise NoScoreFoundError("no [[n]] score found in judge output")
    score = int(matches[-1])
    if not (1 <= score <= 10):
        raise ScoreOutOfRangeError(f"judge score {score} outside [1, 10]")
    return score


def _judge_sample(
    sample: CandidateSample,
    judge: GenerationClient,
    config: ColdstartConfig,
) -> tuple[int | None, str]:
    prompt = build_judge_prompt(
        sample.prompt.rendered_prompt, sample.split.answer, config.template
    )
    attempts = config.judge_retries + 1
    last_reason = ""
    request = GenerationRequest(
        prompt=prompt,
        n=1,
        max_tokens=config.judge_max_tokens,
        temperature=config.judge_temperature,
    )
    for _ in range(attempts):
        try:
            response = judge.generate(request)
            return parse_judge_score(response.completions[0]), ""
        except (NoScoreFoundError, ScoreOutOfRangeError) as exc:
            last_reason = f"judge-parse-error: {exc}"
        except ClientError as exc:
            last_reason = f"judge-error: {exc}"
    return None, last_reason


def coldstart_filter(
    samples: Sequence[CandidateSample],
    judge: GenerationClient,
    config: ColdstartConfig = ColdstartConfig(),
    counter: Callable[[str], int] = approx_token_count,
) -> ColdstartResult:
    """Run correctness -> thinking -> fluency, then keep the top N.

    Survivors are ranked by reasoning length (counter units) descending
    with sample_id breaking ties. With balance_languages on, the top-N
    budget is split evenly between zh and en prompts."""
    audit: list[AuditEvent] = []
    stage2: list[CandidateSample] = []
    for sample in samples:
        report = verify(sample.split.answer, sample.prompt.spec)
        sample.checks["correct"] = report.all_satisfied
        if not report.all_satisfied:
            failed = sum(1 for r in report.items if not r.satisfied)
            audit.append(
                AuditEvent(sample.sample_id, STAGE_CORRECTNESS, "reject", f"{failed} constraint(s) failed")
            )
            continue
        ok = thinking_check(sample.split, config.min_tokens, counter)
        sample.checks["thinking"] = ok
        if not ok:
            audit.append(
                AuditEvent(
                    sample.sample_id,
                    STAGE_THINKING,
                    "reject",
                    f"reasoning below {config.min_tokens} tokens",
                )
            )
            continue
        stage2.append(sample)

    with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
        scored = list(pool.map(lambda s: _judge_sample(s, judge, config), stage2))

    survivors: list[CandidateSample] = []
    for sample, (score, reason) in zip(stage2, scored):
        if score is None:
            audit.append(AuditEvent(sample.sample_id, STAGE_FLUENCY, "reject", reason))
            continue
        sample.checks["fluency_score"] = score
        if score < config.min_score:
            audit.append(
                AuditEvent(
                    sample.sample_id,
                    STAGE_FLUENCY,
                    "reject",
                    f"score {score} below {config.min_score}",
                )
            )
            continue
        survivors.append(sample)

    def rank(pool_samples: list[CandidateSample], budget: int) -> list[CandidateSample]:
        ordered = sorted(
            pool_samples,
            key=lambda s: (-counter(s.split.reasoning), s.sample_id),
        )
        for sample in ordered[budget:]:
            audit.append(
                AuditEvent(sample.sample_id, STAGE_RANKING, "reject", "outside top-n by reasoning length")
            )
        return ordered[:budget]

    if config.balance_languages:
        zh = [s for s in survivors if s.prompt.spec.language == "zh"]
        en = [s for s in survivors if s.prompt.spec.language != "zh"]
        half = config.top_n // 2
        kept = rank(zh, half) + rank(en, config.top_n - half)
    else:
        kept = rank(survivors, config.top_n)
    for sample in kept:
        audit.append(AuditEvent(sample.sample_id, STAGE_RANKING, "keep", ""))
    return ColdstartResult(kept=kept, audit=audit)


# --- JSONL interchange -------------------------------------------------


def sample_to_dict(sample: CandidateSample) -> dict:
    return {
        "sample_id": sample.sample_id,
        "prompt": prompt_record_to_dict(sample.prompt),
        "raw_response": sample.raw_response,
        "checks": sample.checks,
    }


def sample_from_dict(obj: dict) -> CandidateSample:
    try:
        return CandidateSample(
            sample_id=str(obj["sample_id"]),
            prompt=prompt_record_from_dict(obj["prompt"]),
            raw_response=str(obj["raw_response"]),
            checks=dict(obj.get("checks", {})),
        )
    except KeyError as exc:
        raise SchemaError(f"candidate sample missing field: {exc}") from exc


def read_samples(path: str | Path) -> list[CandidateSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                samples.append(sample_from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            except SchemaError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return samples
