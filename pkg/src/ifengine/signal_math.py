"""Per-token training-signal kernels.

Covers the distribution entropy, score-based token selection for
entropy-preserving SFT, the selected-token loss, group-relative
advantage normalization, and the entropy-adaptive regularizer that
weights each token's entropy by a capped softmax of its
(log-probability, advantage) covariance.

All reductions use math.fsum, so results are independent of input
order down to the last bit; ties in selection are broken by
(sample_id, position) so full runs replay deterministically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    BadPercentError,
    BadTemperatureError,
    EmptyBatchError,
    EmptySelectionError,
    GroupTooSmallError,
    MissingAdvantageError,
    NotNormalizedError,
    SchemaError,
    ValidationError,
)

TokenKey = tuple[str, int]

RECORD_FIELDS = (
    "sample_id",
    "position",
    "token_id",
    "token_text",
    "nll",
    "entropy",
    "logp",
    "advantage",
)

SELECTION_SCHEMA_VERSION = "selection_v1"
TEA_SCHEMA_VERSION = "tea_v1"
REPORT_SCHEMA_VERSION = "entropy_report_v1"

_NLL_LOGP_TOL = 1e-6
_ZERO_STD_GUARD = 1e-8

DEFAULT_SELECT_PERCENT = 80.0
DEFAULT_SELECT_ALPHA = 0.8
DEFAULT_TEA_TAU = 1.0
DEFAULT_TEA_CAP = 100.0
DEFAULT_TEA_LAMBDA = 0.05
DEFAULT_REPORT_TOP_K = 200
DEFAULT_REPORT_MIN_FREQ = 100


@dataclass(frozen=True, slots=True)
class TokenRecord:
    """One generated token's training statistics."""

    sample_id: str
    position: int
    token_id: int
    nll: float
    entropy: float
    logp: float
    token_text: str | None = None
    advantage: float | None = None

    def __post_init__(self):
        if self.position < 0:
            raise ValidationError(f"position must be nonnegative, got {self.position}")
        if self.nll < 0:
            raise ValidationError(f"nll must be nonnegative, got {self.nll}")
        if self.entropy < 0:
            raise ValidationError(f"entropy must be nonnegative, got {self.entropy}")
        if self.logp > 0:
            raise ValidationError(f"logp must be nonpositive, got {self.logp}")
        if abs(self.nll + self.logp) > _NLL_LOGP_TOL:
            raise ValidationError(
                f"nll and -logp disagree beyond {_NLL_LOGP_TOL}: "
                f"nll={self.nll}, logp={self.logp}"
            )

    @property
    def key(self) -> TokenKey:
        return (self.sample_id, self.position)


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of quantile-thresholded token selection."""

    threshold: float
    selected: frozenset[TokenKey]
    selected_fraction: float


@dataclass(frozen=True)
class TeaResult:
    covariances: tuple[float, ...]
    coefficients: tuple[float, ...]
    l_tea: float


def entropy(dist: Sequence[float]) -> float:
    """Shannon entropy (natural log) of a probability vector."""
    if not dist:
        raise NotNormalizedError("distribution must be non-empty")
    if any(p < 0 for p in dist):
        raise NotNormalizedError("distribution entries must be nonnegative")
    total = math.fsum(dist)
    if abs(total - 1.0) > 1e-6:
        raise NotNormalizedError(f"distribution sums to {total}, expected 1")
    h = -math.fsum(p * math.log(p) for p in dist if p > 0.0)
    return max(h, 0.0)


def _linear_quantile(sorted_values: Sequence[float], q: float) -> float:
    """Quantile with linear interpolation between order statistics."""
    n = len(sorted_values)
    if n == 1:
        return sorted_values[0]
    h = (n - 1) * q
    lo = math.floor(h)
    frac = h - lo
    if lo + 1 >= n:
        return sorted_values[-1]
    return sorted_values[lo] + frac * (sorted_values[lo + 1] - sorted_values[lo])


def selection_scores(batch: Sequence[TokenRecord], alpha: float) -> list[float]:
    """Per-token selection score: nll - alpha * entropy."""
    return [rec.nll - alpha * rec.entropy for rec in batch]


def sft_select(
    batch: Sequence[TokenRecord],
    r_percent: float,
    alpha: float,
    *,
    literal_quantile: bool = False,
) -> SelectionResult:
    """Select roughly the top r_percent of tokens by nll - alpha*entropy.

    The threshold is the (1 - r/100) linear-interpolation quantile of
    the scores and tokens scoring strictly above it are selected. When
    the threshold coincides with actual score values, tied tokens are
    admitted in (sample_id, position) order until the selected count
    reaches round(N * r / 100), which keeps batches with duplicate
    scores deterministic.

    With literal_quantile=True the threshold sits at the r/100 quantile
    instead, selecting roughly the top (100 - r) percent.
    """
    if not batch:
        raise EmptyBatchError("cannot select from an empty batch")
    if not (0.0 < r_percent <= 100.0):
        raise BadPercentError(f"r_percent must lie in (0, 100], got {r_percent}")

    scores = selection_scores(batch, alpha)
    q = r_percent / 100.0 if literal_quantile else 1.0 - r_percent / 100.0
    threshold = _linear_quantile(sorted(scores), q)

    n = len(batch)
    selected_frac = (100.0 - r_percent) if literal_quantile else r_percent
    target = round(n * selected_frac / 100.0)

    selected = {rec.key for rec, s in zip(batch, scores) if s > threshold}
    if len(selected) < target:
        ties = sorted(rec.key for rec, s in zip(batch, scores) if s == threshold)
        for key in ties:
            if len(selected) >= target:
                break
            selected.add(key)
    return SelectionResult(
        threshold=threshold,
        selected=frozenset(selected),
        selected_fraction=len(selected) / n,
    )


def entropy_sft_loss(batch: Sequence[TokenRecord], selection: SelectionResult) -> float:
    """Mean nll over the selected tokens."""
    if not selection.selected:
        raise EmptySelectionError("selection contains no tokens")
    keys = {rec.key for rec in batch}
    missing = selection.selected - keys
    if missing:
        raise ValidationError(f"selection references tokens not in batch: {sorted(missing)[:3]}")
    picked = [rec.nll for rec in batch if rec.key in selection.selected]
    return math.fsum(picked) / len(picked)


def grpo_advantages(group_rewards: Sequence[float]) -> list[float]:
    """Group-relative advantages: center and scale by the population std.

    Degenerate groups (std below 1e-8) get all-zero advantages instead
    of a blow-up.
    """
    n = len(group_rewards)
    if n < 2:
        raise GroupTooSmallError(f"group must have at least 2 rewards, got {n}")
    mean = math.fsum(group_rewards) / n
    var = math.fsum((r - mean) ** 2 for r in group_rewards) / n
    std = math.sqrt(var)
    if std < _ZERO_STD_GUARD:
        return [0.0] * n
    return [(r - mean) / std for r in group_rewards]


def tea_covariance(records: Sequence[TokenRecord]) -> list[float]:
    """Per-token product of centered logp and centered advantage.

    Both means are taken over the whole rollout batch."""
    if not records:
        raise EmptyBatchError("covariance needs at least one record")
    if any(rec.advantage is None for rec in records):
        raise MissingAdvantageError("every record must carry an advantage")
    n = len(records)
    mean_logp = math.fsum(rec.logp for rec in records) / n
    mean_adv = math.fsum(rec.advantage for rec in records) / n
    return [(rec.logp - mean_logp) * (rec.advantage - mean_adv) for rec in records]


def tea_coefficients(cov: Sequence[float], tau: float, c: float) -> list[float]:
    """Softmax of cov/tau, elementwise capped at c/N.

    The softmax subtracts the max covariance before exponentiating, so
    adding a constant to every covariance leaves the weights bit-identical.
    """
    if tau <= 0:
        raise BadTemperatureError(f"tau must be positive, got {tau}")
    if c <= 0:
        raise ValidationError(f"coefficient cap must be positive, got {c}")
    if not cov:
        raise EmptyBatchError("coefficient computation needs at least one value")
    n = len(cov)
    peak = max(cov)
    exps = [math.exp((v - peak) / tau) for v in cov]
    denom = math.fsum(exps)
    cap = c / n
    return [min(e / denom, cap) for e in exps]


def tea_loss(records: Sequence[TokenRecord], tau: float, c: float) -> TeaResult:
    """Entropy-adaptive regularizer: N * sum_t w_t * H_t.

    w_t is the capped covariance softmax from tea_coefficients over the
    covariances from tea_covariance."""
    cov = tea_covariance(records)
    coeffs = tea_coefficients(cov, tau, c)
    n = len(records)
    value = n * math.fsum(w * rec.entropy for w, rec in zip(coeffs, records))
    return TeaResult(
        covariances=tuple(cov),
        coefficients=tuple(coeffs),
        l_tea=value,
    )


def combined_objective(l_grpo: float, l_tea: float, lam: float) -> float:
    """Total objective: policy loss minus lambda times the regularizer."""
    if lam < 0:
        raise ValidationError(f"lambda must be nonnegative, got {lam}")
    if not (math.isfinite(l_grpo) and math.isfinite(l_tea)):
        raise ValidationError("losses must be finite")
    return l_grpo - lam * l_tea


def token_entropy_report(
    records: Sequence[TokenRecord],
    top_k: int = DEFAULT_REPORT_TOP_K,
    min_freq: int = DEFAULT_REPORT_MIN_FREQ,
) -> list[tuple[str, float, int]]:
    """Highest-mean-entropy token texts with at least min_freq occurrences.

    Returns (token_text, mean_entropy, frequency) triples ranked by mean
    entropy descending; ties go to the more frequent token, then to the
    lexicographically smaller text. Records without token_text are skipped.
    """
    if top_k < 1:
        raise ValidationError(f"top_k must be positive, got {top_k}")
    if min_freq < 1:
        raise ValidationError(f"min_freq must be positive, got {min_freq}")
    groups: dict[str, list[float]] = {}
    for rec in records:
        if rec.token_text is None:
            continue
        groups.setdefault(rec.token_text, []).append(rec.entropy)
    rows = [
        (text, math.fsum(values) / len(values), len(values))
        for text, values in groups.items()
        if len(values) >= min_freq
    ]
    rows.sort(key=lambda row: (-row[1], -row[2], row[0]))
    return rows[:top_k]


# --- JSONL interchange -------------------------------------------------


def record_to_dict(rec: TokenRecord) -> dict:
    return {
        "sample_id": rec.sample_id,
        "position": rec.position,
        "token_id": rec.token_id,
        "token_text": rec.token_text,
        "nll": rec.nll,
        "entropy": rec.entropy,
        "logp": rec.logp,
        "advantage": rec.advantage,
    }


def record_from_dict(obj: dict) -> TokenRecord:
    keys = set(obj)
    expected = set(RECORD_FIELDS)
    if keys != expected:
        extra = keys - expected
        missing = expected - keys
        raise SchemaError(
            f"token record fields mismatch (missing={sorted(missing)}, extra={sorted(extra)})"
        )
    try:
        return TokenRecord(
            sample_id=str(obj["sample_id"]),
            position=int(obj["position"]),
            token_id=int(obj["token_id"]),
            token_text=obj["token_text"],
            nll=float(obj["nll"]),
            entropy=float(obj["entropy"]),
            logp=float(obj["logp"]),
            advantage=None if obj["advantage"] is None else float(obj["advantage"]),
        )
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad token record values: {exc}") from exc


def write_token_records(path: str | Path, records: Iterable[TokenRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def read_token_records(path: str | Path) -> list[TokenRecord]:
    records: list[TokenRecord] = []
    seen: set[TokenKey] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                rec = record_from_dict(obj)
            except (SchemaError, ValidationError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            if rec.key in seen:
                raise SchemaError(f"{path}:{lineno}: duplicate token key {rec.key}")
            seen.add(rec.key)
            records.append(rec)
    return records


def write_selection(
    path: str | Path,
    selection: SelectionResult,
    r_percent: float,
    alpha: float,
) -> None:
    header = {
        "schema": SELECTION_SCHEMA_VERSION,
        "threshold": selection.threshold,
        "r_percent": r_percent,
        "alpha": alpha,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, ensure_ascii=False, sort_keys=True))
        fh.write("\n")
        for sample_id, position in sorted(selection.selected):
            fh.write(json.dumps({"position": position, "sample_id": sample_id}, sort_keys=True))
            fh.write("\n")


def read_selection(path: str | Path) -> tuple[dict, frozenset[TokenKey]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh.read().split("\n") if line.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty selection file")
    header = json.loads(lines[0])
    if header.get("schema") != SELECTION_SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported selection schema {header.get('schema')!r}")
    keys = set()
    for lineno, line in enumerate(lines[1:], start=2):
        obj = json.loads(line)
        try:
            keys.add((str(obj["sample_id"]), int(obj["position"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"{path}:{lineno}: bad selection row: {exc}") from exc
    return header, frozenset(keys)
