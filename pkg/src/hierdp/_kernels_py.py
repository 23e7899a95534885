"""Pure-numpy implementations of the hot kernels.

Kept in lockstep with the compiled twins in _kernels_c.pyx; the backend
equivalence suite exercises both on the same instances.
"""

import numpy as np


def project_to_sum(values, target):
    """L2 projection of `values` onto {x >= 0, sum(x) = target}.

    Active-set scheme: shift all active coordinates by a common constant
    to meet the sum, clamp negatives to zero, repeat. Coordinates once
    clamped stay clamped, so at most len(values) passes run.
    """
    x = np.array(values, dtype=np.float64, copy=True)
    if target < 0:
        raise ValueError("target sum must be non-negative")
    active = np.ones(x.size, dtype=bool)
    for _ in range(x.size):
        count = int(active.sum())
        if count == 0:
            return np.zeros_like(x)
        shift = (target - x[active].sum()) / count
        x[active] += shift
        neg = active & (x < 0.0)
        if not neg.any():
            break
        x[neg] = 0.0
        active &= ~neg
    x[~active] = 0.0
    np.maximum(x, 0.0, out=x)
    return x


def largest_remainder_round(values, target):
    """Round non-negative reals to integers summing exactly to `target`.

    Floor everything, then hand the missing units to the largest
    fractional parts (ties broken by lower index). A surplus (possible
    only at the edge of the precondition |sum - target| < len) is taken
    back from the smallest fractional parts with a positive floor.
    """
    v = np.asarray(values, dtype=np.float64)
    target = int(target)
    if target < 0:
        raise ValueError("target must be a non-negative integer")
    if (v < -1e-9).any():
        raise ValueError("values must be non-negative")
    v = np.maximum(v, 0.0)
    if abs(v.sum() - target) >= v.size:
        raise ValueError("sum of values too far from target for remainder rounding")
    out = np.floor(v).astype(np.int64)
    frac = v - out
    deficit = target - int(out.sum())
    if deficit > 0:
        order = np.lexsort((np.arange(v.size), -frac))
        out[order[:deficit]] += 1
    elif deficit < 0:
        order = np.lexsort((np.arange(v.size), frac))
        for i in order:
            if deficit == 0:
                break
            if out[i] > 0:
                out[i] -= 1
                deficit += 1
    return out


def count_matches_by_leaf(values, leaf_idx, feats, vals, n_leaves):
    """Per-leaf counts of records matching a conjunction of feature=value."""
    mask = np.ones(values.shape[0], dtype=bool)
    for f, v in zip(feats, vals):
        mask &= values[:, f] == v
    return np.bincount(leaf_idx[mask], minlength=n_leaves).astype(np.int64)
