"""Flat indexing of the upper triangle (diagonal included) of a d x d matrix.

Ordering is row-major: (0,0), (0,1), ..., (0,d-1), (1,1), ..., (d-1,d-1).
Every module that moves between a dependency matrix and its parameter
vector goes through these helpers.
"""

import numpy as np


def n_params(d):
    return d * (d + 1) // 2


def dim_from_params(p):
    d = int(round((np.sqrt(8 * p + 1) - 1) / 2))
    if n_params(d) != p:
        raise ValueError(f"{p} is not a triangular number")
    return d


def pairs(d):
    """Row and column index arrays, in flat order."""
    return np.triu_indices(d)


def flat_index(i, j, d):
    if i > j:
        i, j = j, i
    return i * d - i * (i - 1) // 2 + (j - i)


def to_vector(M):
    M = np.asarray(M, dtype=float)
    return M[np.triu_indices(M.shape[0])].copy()


def to_matrix(m, d=None):
    m = np.asarray(m, dtype=float)
    if d is None:
        d = dim_from_params(m.size)
    M = np.zeros((d, d))
    iu = np.triu_indices(d)
    M[iu] = m
    M.T[iu] = m
    return M


def incidence(d):
    """p x d matrix E with E @ W giving w_i (diagonal) or w_i - w_j (pairs)."""
    rows, cols = pairs(d)
    E = np.zeros((rows.size, d))
    q = np.arange(rows.size)
    E[q, rows] = 1.0
    off = rows != cols
    E[q[off], cols[off]] = -1.0
    return E


def diagonal_mask(d):
    rows, cols = pairs(d)
    return rows == cols
