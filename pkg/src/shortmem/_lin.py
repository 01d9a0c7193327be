"""Reductions with a fixed, ascending summation order.

numpy's own reductions may change association with array layout (pairwise
summation, SIMD lanes), so results computed on a chunk of a batch could
differ in the last bit from results computed on the whole batch. Everything
that feeds a table, a value or a report goes through these helpers instead.
"""

import numpy as np


def total(x):
    """Sum over the last axis, accumulating index 0, 1, 2, ... in order."""
    x = np.asarray(x, dtype=float)
    acc = x[..., 0].copy()
    for i in range(1, x.shape[-1]):
        acc += x[..., i]
    return acc


def vecmat(x, m):
    """``x @ m`` for ``x`` of shape (..., n) and ``m`` of shape (n, k)."""
    x = np.asarray(x, dtype=float)
    acc = x[..., 0, None] * m[0]
    for i in range(1, m.shape[0]):
        acc += x[..., i, None] * m[i]
    return acc


def weighted(w, v):
    """``sum_i w[..., i] * v[..., i]`` in ascending order."""
    acc = w[..., 0] * v[..., 0]
    for i in range(1, w.shape[-1]):
        acc += w[..., i] * v[..., i]
    return acc
