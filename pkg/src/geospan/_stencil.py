"""Sparse finite-difference operators on masked uniform grids.

Derivatives along an axis are taken over maximal runs of valid nodes.
Each node gets a centered second-order window where the run allows it and
a shifted second-order window otherwise (window width order+2, which is
one point wider than the centered stencil for odd-order one-sided cases).
Runs too short for any estimate yield zero rows.
"""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np
import scipy.sparse as sp

_CENTER_HALFWIDTH = {1: 1, 2: 1, 3: 2, 4: 2}


@lru_cache(maxsize=None)
def fd_weights(offsets: tuple[int, ...], order: int) -> np.ndarray:
    """Finite-difference weights for the given derivative order at offset 0.

    Solves the Taylor-moment system: weights w satisfy
    sum_l w[l] * offsets[l]^k / k! = delta(k, order) for k < len(offsets).
    """
    n = len(offsets)
    if n <= order:
        raise ValueError("not enough points for this derivative order")
    a = np.empty((n, n))
    for k in range(n):
        a[k] = [off**k / factorial(k) for off in offsets]
    rhs = np.zeros(n)
    rhs[order] = 1.0
    return np.linalg.solve(a, rhs)


def _window_offsets(lk: int, rk: int, size: int, order: int) -> tuple[int, ...]:
    """Stencil offsets for clipped run counts lk/rk and window size.

    lk and rk are the left/right valid-run counts clipped at the centered
    halfwidth; they are exact whenever they matter (below the halfwidth).
    """
    hw = _CENTER_HALFWIDTH[order]
    if lk >= hw and rk >= hw:
        return tuple(range(-hw, hw + 1))
    if lk < hw:
        return tuple(range(-lk, -lk + size))
    return tuple(range(rk - size + 1, rk + 1))


def _run_positions(valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-node counts of consecutive valid nodes to the left and right.

    `valid` is 2D and runs go along the last axis; rows are independent.
    """
    nx = valid.shape[1]
    idx = np.arange(nx)
    blocked = np.where(valid, -1, idx[None, :])
    last_invalid = np.maximum.accumulate(blocked, axis=1)
    left = idx[None, :] - last_invalid - 1

    rev = valid[:, ::-1]
    blocked_r = np.where(rev, -1, idx[None, :])
    last_invalid_r = np.maximum.accumulate(blocked_r, axis=1)
    right = (idx[None, :] - last_invalid_r - 1)[:, ::-1]
    return left, right


def axis_derivative_matrix(
    valid: np.ndarray, spacing: float, order: int, axis: int
) -> sp.csr_matrix:
    """Sparse derivative operator along one axis of a masked (ny, nx) grid.

    Rows and columns index the flattened grid; rows of invalid nodes are
    zero and valid rows reference valid nodes only.
    """
    if axis == 0:
        work = valid.T
    else:
        work = valid
    ny, nx = work.shape
    left, right = _run_positions(work)
    hw = _CENTER_HALFWIDTH[order]
    lk = np.minimum(left, hw)
    rk = np.minimum(right, hw)
    size = np.minimum(order + 2, left + right + 1)

    rows_out, cols_out, data_out = [], [], []
    flat = (np.arange(ny)[:, None] * nx + np.arange(nx)[None, :]).astype(np.int64)
    keys = np.stack([lk, rk, np.where(left + right + 1 <= order, -1, size)], axis=-1)
    keys[~work] = -2

    uniq = np.unique(keys.reshape(-1, 3), axis=0)
    for lkey, rkey, skey in uniq:
        if skey < 0 or lkey < 0:
            continue
        offsets = _window_offsets(int(lkey), int(rkey), int(skey), order)
        mask = (keys[..., 0] == lkey) & (keys[..., 1] == rkey) & (keys[..., 2] == skey) & work
        nodes = flat[mask]
        w = fd_weights(offsets, order) / spacing**order
        for off, wt in zip(offsets, w):
            rows_out.append(nodes)
            cols_out.append(nodes + off)
            data_out.append(np.full(len(nodes), wt))

    n = valid.size
    if not rows_out:
        return sp.csr_matrix((n, n))
    rows = np.concatenate(rows_out)
    cols = np.concatenate(cols_out)
    data = np.concatenate(data_out)
    if axis == 0:
        # Work array was transposed: convert (row-in-transposed) indexing back.
        ny0, nx0 = valid.shape
        rows = (rows % ny0) * nx0 + rows // ny0
        cols = (cols % ny0) * nx0 + cols // ny0
    mat = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    mat.sum_duplicates()
    return mat
