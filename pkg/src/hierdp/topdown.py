"""TopDown release: double-geometric noise plus hierarchical post-processing.

Noise at scale 2L/epsilon is added to every cell of the exact answer
table. Post-processing then walks each query's tree from the root down:
the root is pinned to the exact total (the invariant), and every sibling
group is L2-projected onto the non-negative plane summing to its parent,
then rounded to integers preserving that sum. The released table
therefore satisfies consistency, validity, and faithfulness exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ValidationError
from .mechanisms import PrivacyBudget, RandomSource, double_geometric
from .queries import AnswerTable, NoisyAnswerTable

__all__ = [
    "TopDownConfig",
    "add_noise",
    "project_children",
    "round_preserving_sum",
    "run_topdown",
]


@dataclass(frozen=True)
class TopDownConfig:
    epsilon: float
    seed: int

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")


def add_noise(truth: AnswerTable, config: TopDownConfig) -> NoisyAnswerTable:
    """Independent double-geometric noise at scale 2L/epsilon on every cell."""
    levels = truth.tree.levels_count
    scale = 2.0 * levels / config.epsilon
    rng = RandomSource(config.seed).substream("topdown-noise").generator()
    noise = double_geometric(scale, rng, size=truth.values.shape)
    return NoisyAnswerTable(truth.query_set, truth.tree, truth.values.astype(np.float64) + noise)


def project_children(noisy_children, parent_value: float) -> np.ndarray:
    """Unique L2 projection of a sibling group onto {x >= 0, sum(x) = parent_value}."""
    if parent_value < 0:
        raise ValidationError("parent value must be non-negative")
    return kernels.project_to_sum(np.asarray(noisy_children, dtype=np.float64), float(parent_value))


def round_preserving_sum(values, target_sum: int) -> np.ndarray:
    """Largest-remainder rounding to integers summing exactly to `target_sum`.

    Floors everything, then gives the leftover units to the largest
    fractional parts, ties broken by lower index. Each output stays
    within 1 of its input's floor/ceil.
    """
    if target_sum < 0:
        raise ValidationError("target sum must be a non-negative integer")
    try:
        return kernels.largest_remainder_round(np.asarray(values, dtype=np.float64), int(target_sum))
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def run_topdown(truth: AnswerTable, config: TopDownConfig, budget: PrivacyBudget | None = None) -> AnswerTable:
    """Full TopDown pass over an exact answer table.

    Per query: the root is set to the true total, then level by level each
    sibling group is projected against its already-final parent and
    rounded. When a ledger is supplied the run records a single spend of
    the full epsilon (the mechanism is pure epsilon-DP).
    """
    if budget is not None:
        budget.spend(config.epsilon, 0.0)
    noisy = add_noise(truth, config)
    tree = truth.tree
    out = np.zeros_like(truth.values, dtype=np.int64)
    root_col = tree.node_index[tree.root]
    out[:, root_col] = truth.values[:, root_col]
    for qi in range(out.shape[0]):
        for level in tree.levels[:-1]:
            for parent in level:
                child_ids = tree.children[parent]
                cols = [tree.node_index[c] for c in child_ids]
                parent_value = int(out[qi, tree.node_index[parent]])
                projected = kernels.project_to_sum(noisy.values[qi, cols], float(parent_value))
                out[qi, cols] = kernels.largest_remainder_round(projected, parent_value)
    return AnswerTable(truth.query_set, tree, out)
