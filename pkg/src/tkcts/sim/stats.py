"""Mann-Whitney U test with an exact permutation distribution for small samples."""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

EXACT_LIMIT = 400


class MannWhitneyResult(NamedTuple):
    u: float
    p_two_sided: float
    p_greater: float
    p_less: float
    exact: bool

    def significant(self, alpha: float = 0.05, alternative: str = "two-sided") -> bool:
        return self.pvalue(alternative) < alpha

    def pvalue(self, alternative: str = "two-sided") -> float:
        if alternative == "two-sided":
            return self.p_two_sided
        if alternative == "greater":
            return self.p_greater
        if alternative == "less":
            return self.p_less
        raise ValueError(f"unknown alternative {alternative!r}")


def midranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    arr = np.asarray(values, dtype=float)
    order = np.argsort(arr, kind="mergesort")
    ranks = np.empty(len(arr), dtype=float)
    sorted_vals = arr[order]
    i = 0
    n = len(arr)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _subset_sum_distribution(weights: np.ndarray, m: int) -> np.ndarray:
    """probs[s] = P(sum of a uniformly random m-subset of integer ``weights`` equals s)."""
    total = int(weights.sum())
    # counts[j, s]: number of j-subsets of the items seen so far with sum s (float to avoid overflow).
    counts = np.zeros((m + 1, total + 1))
    counts[0, 0] = 1.0
    for w in weights:
        w = int(w)
        for j in range(m, 0, -1):
            if w == 0:
                counts[j] += counts[j - 1]
            else:
                counts[j, w:] += counts[j - 1, :-w]
    row = counts[m]
    return row / row.sum()


def mann_whitney_u(x: Sequence[float], y: Sequence[float], exact_limit: int = EXACT_LIMIT) -> MannWhitneyResult:
    """U statistic for ``x`` plus p-values.

    ``u`` counts pairs with x > y (ties count one half). When
    ``len(x) * len(y) <= exact_limit`` the p-values come from the exact
    permutation distribution of the midrank sum (ties handled exactly);
    otherwise from the normal approximation with tie and continuity
    corrections. ``p_greater`` tests x stochastically larger than y.
    """
    nx, ny = len(x), len(y)
    if nx == 0 or ny == 0:
        raise ValueError("both samples must be non-empty")
    ranks = midranks(list(x) + list(y))
    rank_sum_x = float(ranks[:nx].sum())
    u = rank_sum_x - nx * (nx + 1) / 2.0
    mean = nx * ny / 2.0
    if nx * ny <= exact_limit:
        doubled = np.rint(ranks * 2).astype(np.int64)
        # Enumerate the smaller group; convert its rank sum to U for x.
        m = min(nx, ny)
        probs = _subset_sum_distribution(doubled, m)
        sums2 = np.arange(len(probs))
        total2 = int(doubled.sum())
        if nx <= ny:
            u2 = sums2 - nx * (nx + 1)  # 2U for x
        else:
            u2 = (total2 - sums2) - nx * (nx + 1)
        obs2 = int(round(2 * u))
        dev = np.abs(u2 - 2 * mean)
        obs_dev = abs(obs2 - 2 * mean)
        mask = probs > 0
        p_two = float(probs[mask & (dev >= obs_dev - 1e-9)].sum())
        p_greater = float(probs[mask & (u2 >= obs2)].sum())
        p_less = float(probs[mask & (u2 <= obs2)].sum())
        return MannWhitneyResult(u, min(p_two, 1.0), min(p_greater, 1.0), min(p_less, 1.0), True)

    n = nx + ny
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(((tie_counts ** 3) - tie_counts).sum())
    var = nx * ny / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        return MannWhitneyResult(u, 1.0, 1.0, 1.0, False)
    sd = math.sqrt(var)
    z_greater = (u - mean - 0.5) / sd
    z_less = (u - mean + 0.5) / sd
    p_greater = _norm_sf(z_greater)
    p_less = 1.0 - _norm_sf(z_less)
    z_two = (abs(u - mean) - 0.5) / sd
    p_two = min(1.0, 2.0 * _norm_sf(z_two))
    return MannWhitneyResult(u, p_two, p_greater, p_less, False)


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))
