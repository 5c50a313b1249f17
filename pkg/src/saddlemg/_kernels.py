"""Compiled inner loop of the one-dimensional kernel (Vanka) sweep."""

import numpy as np
from numba import njit


@njit(cache=True)
def kernel_sweep(order, edge_ptr, edges, coef, w_ptr, w_idx, w_val, denom, flux, res):
    """Sequential exact minimization along each patch kernel vector.

    For patch ``i`` with kernel vector ``c`` the step is
    ``t = c.res / c.M.c``; ``flux`` gains ``t c`` and ``res`` loses
    ``t M c`` (stored column-wise in ``w_*``). Returns the accumulated
    ``sum_i t_i^2 c_i.M.c_i / 2``, the energy decrease of the sweep.
    """
    decrease = 0.0
    for i in order:
        s = 0.0
        for j in range(edge_ptr[i], edge_ptr[i + 1]):
            s += coef[j] * res[edges[j]]
        if s == 0.0:
            continue
        t = s / denom[i]
        for j in range(edge_ptr[i], edge_ptr[i + 1]):
            flux[edges[j]] += t * coef[j]
        for j in range(w_ptr[i], w_ptr[i + 1]):
            res[w_idx[j]] -= t * w_val[j]
        decrease += 0.5 * t * s
    return decrease


def warmup():
    z = np.zeros(1, dtype=np.int64)
    kernel_sweep(np.zeros(0, dtype=np.int64), z, z, np.zeros(1), z, z, np.zeros(1),
                 np.ones(1), np.zeros(1), np.zeros(1))
