"""Rollout-level length reward and its combination with correctness.

The length reward rides a cosine ramp from 0 at length 0 to 1 at the
length budget, rewarding long responses when the correctness score is
decent, mildly penalizing long low-correctness responses, and hard
penalizing anything at or over the budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import NonPositiveLMaxError, RcOutOfRangeError

DEFAULT_RC_THRESHOLD = 0.2
OVERLENGTH_PENALTY = -2.0


@dataclass(frozen=True)
class LengthRewardParams:
    l_max: int
    r_c_threshold: float = DEFAULT_RC_THRESHOLD

    def __post_init__(self):
        if self.l_max <= 0:
            raise NonPositiveLMaxError(f"l_max must be positive, got {self.l_max}")
        if not (0.0 <= self.r_c_threshold <= 1.0):
            raise RcOutOfRangeError(
                f"r_c_threshold must lie in [0, 1], got {self.r_c_threshold}"
            )


def gamma(l: int, l_max: int) -> float:
    """Cosine ramp 0.5 * (1 - cos(pi * l / l_max)), clamped at l_max."""
    if l_max <= 0:
        raise NonPositiveLMaxError(f"l_max must be positive, got {l_max}")
    if l < 0:
        raise ValueError(f"length must be nonnegative, got {l}")
    ratio = min(l, l_max) / l_max
    return 0.5 * (1.0 - math.cos(math.pi * ratio))


def length_reward(r_c: float, l: int, params: LengthRewardParams) -> float:
    """Length shaping term in [-2, 2].

    -2 at or over the budget; 2 * r_c * gamma(l) for responses whose
    correctness clears the threshold; -gamma(l) otherwise.
    """
    if not (0.0 <= r_c <= 1.0):
        raise RcOutOfRangeError(f"r_c must lie in [0, 1], got {r_c}")
    if l >= params.l_max:
        return OVERLENGTH_PENALTY
    g = gamma(l, params.l_max)
    if r_c >= params.r_c_threshold:
        return 2.0 * r_c * g
    return -g


def total_reward(r_c: float, r_l: float) -> float:
    """Rollout scalar: correctness plus length shaping."""
    return r_c + r_l
