"""Description-length loss."""

from __future__ import annotations

import numpy as np

DEFAULT_PRECISION = 1e-5


def dl_loss(predicted, actual, precision_eps: float = DEFAULT_PRECISION) -> float:
    """Mean description length of the residuals, in bits per point.

    ``mean(0.5 * log2(1 + (err / eps)^2))``. Any undefined prediction makes
    the loss infinite. Summed over points this behaves like the log of a
    geometric mean, so shrinking a residual that is already near ``eps``
    is rewarded almost as much as shrinking a large one.
    """
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape or p.size == 0:
        raise ValueError("predicted and actual must be non-empty and equally shaped")
    if precision_eps <= 0:
        raise ValueError("precision_eps must be positive")
    if not np.all(np.isfinite(p)):
        return float("inf")
    with np.errstate(over="ignore"):
        z = (p - a) / precision_eps
        return float(np.mean(0.5 * np.log1p(z * z) / np.log(2.0)))
