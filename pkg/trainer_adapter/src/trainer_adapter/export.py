"""Export per-token forward-pass statistics as token-record JSONL.

The wire schema is one JSON object per line with exactly the fields
{sample_id, position, token_id, token_text, nll, entropy, logp,
advantage}; nll must equal -logp and entropy must be nonnegative, which
the engine re-validates on load.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence


class SchemaMismatchError(Exception):
    """Batch violates the export schema (duplicate keys, bad values)."""


@dataclass(frozen=True)
class TokenStats:
    """Summary statistics for one generated token."""

    sample_id: str
    position: int
    token_id: int
    nll: float
    entropy: float
    logp: float
    token_text: str | None = None
    advantage: float | None = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.sample_id, self.position)


@dataclass(frozen=True)
class BatchExport:
    """One training step's worth of token statistics."""

    records: tuple[TokenStats, ...]
    run_id: str
    step: int

    def __post_init__(self):
        keys = [rec.key for rec in self.records]
        if len(keys) != len(set(keys)):
            dupes = sorted({k for k in keys if keys.count(k) > 1})
            raise SchemaMismatchError(f"duplicate (sample_id, position) keys: {dupes[:3]}")


def stats_from_distribution(
    sample_id: str,
    position: int,
    token_id: int,
    probs: Sequence[float],
    token_text: str | None = None,
    advantage: float | None = None,
) -> TokenStats:
    """Token statistics from a full next-token distribution.

    token_id indexes into probs; entropy uses the natural log with
    0*log(0) treated as zero."""
    if not probs:
        raise SchemaMismatchError("empty probability vector")
    if token_id < 0 or token_id >= len(probs):
        raise SchemaMismatchError(f"token_id {token_id} outside vocabulary of {len(probs)}")
    chosen = probs[token_id]
    if chosen <= 0:
        raise SchemaMismatchError("chosen token has zero probability")
    logp = math.log(chosen)
    entropy = max(0.0, -math.fsum(p * math.log(p) for p in probs if p > 0.0))
    return TokenStats(
        sample_id=sample_id,
        position=position,
        token_id=token_id,
        nll=-logp,
        entropy=entropy,
        logp=logp,
        token_text=token_text,
        advantage=advantage,
    )


def broadcast_advantages(
    records: Sequence[TokenStats], per_sequence: dict[str, float]
) -> list[TokenStats]:
    """Copy each sequence-level advantage onto all of its tokens."""
    out = []
    for rec in records:
        if rec.sample_id not in per_sequence:
            raise SchemaMismatchError(f"no advantage supplied for sequence {rec.sample_id!r}")
        out.append(
            TokenStats(
                sample_id=rec.sample_id,
                position=rec.position,
                token_id=rec.token_id,
                nll=rec.nll,
                entropy=rec.entropy,
                logp=rec.logp,
                token_text=rec.token_text,
                advantage=per_sequence[rec.sample_id],
            )
        )
    return out


def export_records(batch: BatchExport, path: str | Path) -> None:
    """Write the batch as token-record JSONL, one record per line."""
    for rec in batch.records:
        if rec.nll < 0 or rec.entropy < 0 or rec.logp > 0:
            raise SchemaMismatchError(f"bad statistics for {rec.key}")
        if abs(rec.nll + rec.logp) > 1e-6:
            raise SchemaMismatchError(f"nll and -logp disagree for {rec.key}")
    with open(path, "w", encoding="utf-8") as fh:
        for rec in batch.records:
            fh.write(
                json.dumps(
                    {
                        "sample_id": rec.sample_id,
                        "position": rec.position,
                        "token_id": rec.token_id,
                        "token_text": rec.token_text,
                        "nll": rec.nll,
                        "entropy": rec.entropy,
                        "logp": rec.logp,
                        "advantage": rec.advantage,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
            )
            fh.write("\n")


def read_selection_file(path: str | Path) -> tuple[dict, set[tuple[str, int]]]:
    """Parse an engine selection file: header line, then key rows."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh.read().split("\n") if line.strip()]
    if not lines:
        raise SchemaMismatchError(f"{path}: empty selection file")
    header = json.loads(lines[0])
    if "threshold" not in header:
        raise SchemaMismatchError(f"{path}: selection header missing threshold")
    keys = set()
    for line in lines[1:]:
        obj = json.loads(line)
        keys.add((str(obj["sample_id"]), int(obj["position"])))
    return header, keys
