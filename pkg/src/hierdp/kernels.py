"""Backend selection for the hot kernels.

The compiled extension is preferred when present; set HIERDP_PURE_PYTHON=1
to force the numpy fallback. Both backends implement the same contracts
and are exercised against each other in the test suite.
"""

import os

from . import _kernels_py

if os.environ.get("HIERDP_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels_c as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

project_to_sum = _impl.project_to_sum
largest_remainder_round = _impl.largest_remainder_round
count_matches_by_leaf = _impl.count_matches_by_leaf

__all__ = [
    "BACKEND",
    "project_to_sum",
    "largest_remainder_round",
    "count_matches_by_leaf",
]
