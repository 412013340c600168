"""Shared helpers for the robust-fitting loops.

All three robust stages (optical sphere fits, radar subset search,
projective refinement) rank candidates by the same trade-off rule between
inlier maximization and error minimization, and all draw their randomness
from explicitly seeded, spawnable generators.
"""

from __future__ import annotations

import numpy as np


def accept_candidate(k_new: float, e_new: float, k_best: float, e_best: float,
                     t_inl: float) -> bool:
    """Decide whether a candidate replaces the current best.

    If the inlier ratios differ by more than ``t_inl`` the candidate with
    the higher ratio wins; when the ratios are comparable the lower error
    wins. ``t_inl`` is the trade-off knob between inlier count and error.

    Initialize the running best with ``k_best = -inf, e_best = +inf`` so the
    first valid candidate is always accepted.
    """
    if abs(k_new - k_best) > t_inl:
        return k_new > k_best
    return e_new < e_best


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent deterministic generators derived from one seed."""
    seq = np.random.SeedSequence(int(seed))
    return [np.random.Generator(np.random.PCG64(child)) for child in seq.spawn(n)]
