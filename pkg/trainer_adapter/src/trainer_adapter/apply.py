"""Apply engine outputs back onto trainer-side losses."""

from __future__ import annotations

import math
from typing import Mapping

TokenKey = tuple[str, int]


class KeyMismatchError(Exception):
    """Selection or coefficients reference tokens the trainer lacks."""


def apply_selection_mask(
    losses: Mapping[TokenKey, float], selected: set[TokenKey]
) -> float:
    """Mean per-token loss over the selected tokens."""
    if not selected:
        raise KeyMismatchError("selection is empty")
    missing = selected - set(losses)
    if missing:
        raise KeyMismatchError(f"selected tokens missing from losses: {sorted(missing)[:3]}")
    picked = [losses[key] for key in selected]
    return math.fsum(picked) / len(picked)


def apply_tea_regularizer(policy_loss: float, l_tea: float, lam: float) -> float:
    """Total objective: policy loss minus lam times the regularizer."""
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    return policy_loss - lam * l_tea
