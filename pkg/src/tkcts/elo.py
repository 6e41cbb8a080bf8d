"""Elo rating math for pairwise solution comparisons.

Expected score ``E_i = 1 / (1 + 10 ** ((R_j - R_i) / 400))`` and update
``R_i' = R_i + K * (S_i - E_i)``, applied to both sides once per comparison.
Ratings are kept as unrounded floats.
"""

from __future__ import annotations

import math
from typing import Callable, Mapping, NamedTuple

INITIAL_RATING = 1500.0
K_FACTOR = 32.0

WINNERS = ("i", "j", "tie")


class RatingPair(NamedTuple):
    r_i: float
    r_j: float


class OutcomeScores(NamedTuple):
    s_i: float
    s_j: float


def expected_score(r_i: float, r_j: float) -> float:
    if not (math.isfinite(r_i) and math.isfinite(r_j)):
        raise ValueError(f"ratings must be finite, got {r_i!r}, {r_j!r}")
    return 1.0 / (1.0 + 10.0 ** ((r_j - r_i) / 400.0))


def outcome_scores(winner: str) -> OutcomeScores:
    if winner == "i":
        return OutcomeScores(1.0, 0.0)
    if winner == "j":
        return OutcomeScores(0.0, 1.0)
    if winner == "tie":
        return OutcomeScores(0.5, 0.5)
    raise ValueError(f"winner must be one of {WINNERS}, got {winner!r}")


def update_pair(ratings: tuple[float, float], winner: str, k_factor: float = K_FACTOR) -> RatingPair:
    if k_factor <= 0:
        raise ValueError("k_factor must be positive")
    r_i, r_j = ratings
    e_i = expected_score(r_i, r_j)
    s_i, _ = outcome_scores(winner)
    # One delta applied symmetrically: E_j = 1 - E_i and S_j = 1 - S_i.
    delta = k_factor * (s_i - e_i)
    return RatingPair(r_i + delta, r_j - delta)


def ranking(ratings: Mapping[int, float], tie_break: Callable[[int], object] | None = None) -> list[int]:
    """Ids sorted by rating, highest first; equal ratings fall back to ``tie_break`` (default: id)."""
    if not ratings:
        raise ValueError("cannot rank an empty rating map")
    tie_break = tie_break or (lambda node_id: node_id)
    return sorted(ratings, key=lambda node_id: (-ratings[node_id], tie_break(node_id)))
