"""Shared differential-privacy primitives.

Three mechanisms (double-geometric, Gaussian, exponential), a sequential-
composition budget ledger, and a seedable randomness source with keyed
sub-streams. All samplers are deterministic functions of their parameters
and the generator state.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceededError, ValidationError

__all__ = [
    "PrivacyBudget",
    "RandomSource",
    "double_geometric",
    "gaussian_sigma",
    "gaussian_noise",
    "exponential_mechanism",
]


def _digest(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


@dataclass
class RandomSource:
    """Seeded randomness with derivable, independent sub-streams.

    Equal seeds give identical draw sequences; `substream(*keys)` derives
    a child source keyed by e.g. (algorithm, repetition) so workers never
    share a stream.
    """

    seed: int

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(int(self.seed)))

    def substream(self, *keys) -> "RandomSource":
        return RandomSource(_digest(int(self.seed), *keys))


@dataclass
class PrivacyBudget:
    """(epsilon, delta) ledger with atomic spend semantics.

    A spend is rejected, before any randomness is consumed, if it would
    push either running total past the budget (tiny float headroom aside).
    """

    epsilon: float
    delta: float = 0.0
    spent_epsilon: float = 0.0
    spent_delta: float = 0.0
    _log: list[tuple[float, float]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        if not (0.0 <= self.delta < 1.0):
            raise ValidationError("delta must lie in [0, 1)")

    def spend(self, epsilon_cost: float, delta_cost: float = 0.0) -> None:
        if epsilon_cost < 0 or delta_cost < 0:
            raise ValidationError("spend costs must be non-negative")
        # headroom scales with the budget so many equal shares can sum to it
        eps_tol = 1e-12 * max(1.0, self.epsilon)
        delta_tol = 1e-15 * max(1.0, self.delta)
        if self.spent_epsilon + epsilon_cost > self.epsilon + eps_tol:
            raise BudgetExceededError(
                f"epsilon overdraft: {self.spent_epsilon} + {epsilon_cost} > {self.epsilon}"
            )
        if self.spent_delta + delta_cost > self.delta + delta_tol:
            raise BudgetExceededError(
                f"delta overdraft: {self.spent_delta} + {delta_cost} > {self.delta}"
            )
        self.spent_epsilon += epsilon_cost
        self.spent_delta += delta_cost
        self._log.append((epsilon_cost, delta_cost))

    @property
    def remaining_epsilon(self) -> float:
        return max(0.0, self.epsilon - self.spent_epsilon)

    @property
    def remaining_delta(self) -> float:
        return max(0.0, self.delta - self.spent_delta)

    def audit(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "spent_epsilon": self.spent_epsilon,
            "spent_delta": self.spent_delta,
            "within_budget": bool(
                self.spent_epsilon <= self.epsilon + 1e-12 * max(1.0, self.epsilon)
                and self.spent_delta <= self.delta + 1e-15 * max(1.0, self.delta)
            ),
        }


def double_geometric(scale: float, rng: np.random.Generator, size=None):
    """Integer noise with pmf P(k) = (1-a)/(1+a) * a^|k|, a = exp(-1/scale).

    Sampled exactly as the difference of two geometric draws with success
    probability 1 - a; no rejection loop. Adding this noise to a count
    gives the classic two-sided-geometric (discrete Laplace) mechanism.
    """
    if scale <= 0:
        raise ValidationError("scale must be positive")
    p = -math.expm1(-1.0 / scale)
    forward = rng.geometric(p, size=size)
    backward = rng.geometric(p, size=size)
    diff = forward - backward
    return int(diff) if size is None else diff


def gaussian_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    """Classic Gaussian-mechanism calibration sigma = s*sqrt(2 ln(1.25/delta))/eps."""
    if sensitivity <= 0:
        raise ValidationError("sensitivity must be positive")
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    if not (0.0 < delta < 1.0):
        raise ValidationError("delta must lie in (0, 1)")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def gaussian_noise(
    sensitivity: float,
    epsilon: float,
    delta: float,
    rng: np.random.Generator,
    size=None,
):
    """Zero-mean normal noise calibrated by `gaussian_sigma`."""
    return rng.normal(0.0, gaussian_sigma(sensitivity, epsilon, delta), size=size)


def exponential_mechanism(
    candidates,
    scores,
    sensitivity: float,
    epsilon: float,
    rng: np.random.Generator,
) -> int:
    """Pick a candidate index with probability proportional to exp(eps*score/(2*sens)).

    Scores are max-shifted before exponentiation so large logits never
    overflow.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if len(candidates) != scores.size or scores.size == 0:
        raise ValidationError("candidates and scores must be equal-length and non-empty")
    if sensitivity <= 0:
        raise ValidationError("sensitivity must be positive")
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    logits = (epsilon / (2.0 * sensitivity)) * scores
    logits -= logits.max()
    weights = np.exp(logits)
    probs = weights / weights.sum()
    return int(rng.choice(scores.size, p=probs))
