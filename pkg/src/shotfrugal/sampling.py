"""Shot allocation over weighted term collections.

Shots are handed out in blocks of ``s0``. ``s_tot // s0`` blocks follow the
chosen strategy and the ``s_tot % s0`` leftover shots go one per term,
round-robin from the first term with nonzero weight.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import BudgetError, DistributionError

_FLOOR_TOL = 1e-9


class AllocationStrategy(str, enum.Enum):
    UDS = "UDS"  # uniform deterministic
    WDS = "WDS"  # weighted deterministic
    WRS = "WRS"  # weighted random (multinomial)
    WHS = "WHS"  # weighted hybrid

    @classmethod
    def parse(cls, value) -> "AllocationStrategy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown allocation strategy {value!r}") from None


@dataclass(frozen=True, eq=False)
class ShotTable:
    """Integer shots per term plus the analytic mean ``E[s]`` of each entry."""

    shots: np.ndarray
    total: int
    expected: np.ndarray
    s0: int = 1

    def __post_init__(self):
        if np.any(self.shots < 0) or int(self.shots.sum()) != self.total:
            raise BudgetError("shot table must be nonnegative and sum to its total")


def wrs_probabilities(weights) -> np.ndarray:
    """``|w_k| / sum |w|``."""
    w = np.abs(np.asarray(weights, dtype=float).reshape(-1))
    if w.size == 0 or not np.all(np.isfinite(w)):
        raise DistributionError("weights must be a nonempty finite vector")
    total = w.sum()
    if total <= 0:
        raise DistributionError("at least one weight must be nonzero")
    return w / total


def _ranked_bonus(frac: np.ndarray, count: np.ndarray) -> np.ndarray:
    """One extra unit for the ``count`` largest entries of each row of ``frac``;
    ties go to the lowest index."""
    order = np.argsort(-frac, axis=1, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(frac.shape[1])[None, :].repeat(frac.shape[0], 0), axis=1)
    return (rank < count[:, None]).astype(np.int64)


def _round_robin(amount: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Spread ``amount`` (per row) over the active columns, lowest index first."""
    n_active = int(active.sum())
    out = np.zeros((amount.shape[0], active.shape[0]), dtype=np.int64)
    if n_active == 0:
        return out
    cols = np.flatnonzero(active)
    pos = np.arange(n_active)
    out[:, cols] = amount[:, None] // n_active + (pos[None, :] < (amount % n_active)[:, None])
    return out


def split_blocks(n_blocks, probs: np.ndarray, strategy, rng: np.random.Generator | None = None):
    """Distribute ``n_blocks`` (one count per row) over terms.

    Returns ``(blocks, expected, hybrid)``: integer blocks and their analytic
    means, both shaped ``(U, T)``, and for WHS the pair ``(leftover, pi)``
    describing the random part (``None`` otherwise).
    """
    strategy = AllocationStrategy.parse(strategy)
    n_blocks = np.atleast_1d(np.asarray(n_blocks, dtype=np.int64))
    probs = np.asarray(probs, dtype=float)
    active = probs > 0
    if strategy is AllocationStrategy.UDS:
        blocks = _round_robin(n_blocks, active)
        return blocks, blocks.astype(float), None
    raw = n_blocks[:, None] * probs[None, :]
    if strategy is AllocationStrategy.WRS:
        if rng is None:
            raise ValueError("WRS needs a random generator")
        return rng.multinomial(n_blocks, probs), raw, None
    floors = np.floor(raw + _FLOOR_TOL).astype(np.int64)
    leftover = n_blocks - floors.sum(axis=1)
    frac = raw - floors
    if strategy is AllocationStrategy.WDS:
        blocks = floors + _ranked_bonus(np.where(active, frac, -np.inf), leftover)
        return blocks, blocks.astype(float), None
    # WHS: deterministic floors, leftover blocks drawn in proportion to residuals
    if rng is None:
        raise ValueError("WHS needs a random generator")
    resid = np.clip(frac, 0.0, None) * active
    norm = resid.sum(axis=1, keepdims=True)
    pi = np.where(norm > 0, resid / np.where(norm > 0, norm, 1.0), probs[None, :])
    pi = pi / pi.sum(axis=1, keepdims=True)
    blocks = floors + rng.multinomial(leftover, pi)
    expected = floors + leftover[:, None] * pi
    return blocks, expected, (leftover, pi)


def allocate_batch(s_tot, weights, strategy, s0: int = 1, rng: np.random.Generator | None = None):
    """Vectorized :func:`allocate` over a vector of budgets.

    Returns ``(shots, expected)`` with shape ``(U, T)``.
    """
    if s0 < 1:
        raise BudgetError(f"block size s0 must be >= 1, got {s0}")
    s_tot = np.atleast_1d(np.asarray(s_tot, dtype=np.int64))
    if np.any(s_tot < 0):
        raise BudgetError("shot budgets must be >= 0")
    probs = wrs_probabilities(weights)
    blocks, expected_blocks, _ = split_blocks(s_tot // s0, probs, strategy, rng)
    rem = _round_robin(s_tot % s0, probs > 0)
    return blocks * s0 + rem, expected_blocks * s0 + rem


def allocate(s_tot: int, weights, strategy, s0: int = 1, rng: np.random.Generator | None = None) -> ShotTable:
    """Split ``s_tot`` shots over terms according to ``strategy``."""
    shots, expected = allocate_batch(np.array([s_tot]), weights, strategy, s0, rng)
    return ShotTable(shots[0], int(s_tot), expected[0], int(s0))


def allocation_moments(s_tot: int, weights, strategy, s0: int = 1):
    """Analytic ``E[s_k]`` and ``Cov[s_k, s_l]`` of :func:`allocate`."""
    strategy = AllocationStrategy.parse(strategy)
    probs = wrs_probabilities(weights)
    n_blocks = np.array([s_tot // s0])
    rem = _round_robin(np.array([s_tot % s0]), probs > 0)[0]
    if strategy is AllocationStrategy.WHS:
        rng = np.random.default_rng(0)  # only the deterministic parts are read
        _, expected, (leftover, pi) = split_blocks(n_blocks, probs, strategy, rng)
        pi, n_rand = pi[0], float(leftover[0])
        cov = s0**2 * n_rand * (np.diag(pi) - np.outer(pi, pi))
    elif strategy is AllocationStrategy.WRS:
        expected = n_blocks[:, None] * probs[None, :]
        cov = s0**2 * float(n_blocks[0]) * (np.diag(probs) - np.outer(probs, probs))
    else:
        blocks, expected, _ = split_blocks(n_blocks, probs, strategy)
        cov = np.zeros((probs.size, probs.size))
    return expected[0] * s0 + rem, cov
