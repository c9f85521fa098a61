"""Coordinate-descent kernels for penalized weighted least squares.

All kernels operate on standardized columns (zero mean, unit 1/n-variance)
and solve

    min_{b0, beta}  (1/(2n)) sum_i w_i (y_i - b0 - x_i'beta)^2
                    + l1 * ||beta||_1 + (l2/2) * ||beta||^2

with the intercept b0 unpenalized.  Columns whose weighted squared norm is
zero (constant columns) are never updated and keep coefficient 0.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _sweep(X, w, r, beta, col_sq, l1, l2, indices, n, sum_w):
    """One pass of coordinate updates over ``indices``; returns max |delta|."""
    max_delta = 0.0
    for k in range(indices.size):
        j = indices[k]
        cs = col_sq[j]
        if cs <= 0.0:
            continue
        num = 0.0
        for i in range(n):
            num += w[i] * X[i, j] * r[i]
        num = num / n + cs * beta[j]
        if l1 > 0.0:
            if num > l1:
                new = (num - l1) / (cs + l2)
            elif num < -l1:
                new = (num + l1) / (cs + l2)
            else:
                new = 0.0
        else:
            new = num / (cs + l2)
        delta = new - beta[j]
        if delta != 0.0:
            beta[j] = new
            for i in range(n):
                r[i] -= X[i, j] * delta
            if abs(delta) > max_delta:
                max_delta = abs(delta)
    # unpenalized intercept: shift residual to weighted mean zero
    num = 0.0
    for i in range(n):
        num += w[i] * r[i]
    d0 = num / sum_w
    if d0 != 0.0:
        for i in range(n):
            r[i] -= d0
        if abs(d0) > max_delta:
            max_delta = abs(d0)
    return max_delta, d0


@njit(cache=True, nogil=True)
def cd_solve(X, y, w, l1, l2, beta, intercept, tol, max_sweeps):
    """Active-set coordinate descent; mutates ``beta``, returns (b0, sweeps).

    ``X`` must be Fortran-ordered with standardized columns.  ``beta`` and
    ``intercept`` are warm-start values on the standardized scale.
    """
    n, p = X.shape
    sum_w = 0.0
    for i in range(n):
        sum_w += w[i]
    col_sq = np.empty(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += w[i] * X[i, j] * X[i, j]
        col_sq[j] = s / n
    r = np.empty(n)
    for i in range(n):
        r[i] = y[i] - intercept
    for j in range(p):
        if beta[j] != 0.0:
            for i in range(n):
                r[i] -= X[i, j] * beta[j]
    b0 = intercept
    all_idx = np.arange(p)
    sweeps = 0
    while sweeps < max_sweeps:
        # full pass to admit new coordinates
        max_delta, d0 = _sweep(X, w, r, beta, col_sq, l1, l2, all_idx, n, sum_w)
        b0 += d0
        sweeps += 1
        if max_delta < tol:
            break
        # iterate on the active set until stable
        active = np.flatnonzero(beta)
        while sweeps < max_sweeps and active.size < p:
            max_delta, d0 = _sweep(X, w, r, beta, col_sq, l1, l2, active, n, sum_w)
            b0 += d0
            sweeps += 1
            if max_delta < tol:
                break
    return b0, sweeps
