"""NumPy reference implementation of the scoring kernels.

Semantics contract shared with the compiled backend:
score_i = dot(row_i, wq) / (row_norm_i * q_norm), zero where a norm is zero;
top-k ordered by score descending, row index ascending on ties.
"""

from __future__ import annotations

import numpy as np


def topk_scan(
    matrix: np.ndarray,
    wq: np.ndarray,
    row_norms: np.ndarray,
    q_norm: float,
    k: int,
    subset: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    if subset is None:
        rows = matrix
        norms = row_norms
        ids = np.arange(matrix.shape[0], dtype=np.intp)
    else:
        ids = np.asarray(subset, dtype=np.intp)
        rows = matrix[ids]
        norms = row_norms[ids]
    dots = rows @ wq
    denom = norms * q_norm
    scores = np.zeros(len(ids))
    np.divide(dots, denom, out=scores, where=denom > 0)
    k = min(k, len(ids))
    # lexsort: last key is primary, so ties fall back to ascending row id
    order = np.lexsort((ids, -scores))[:k]
    return ids[order], scores[order]


def assign_nearest(matrix: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the Euclidean-nearest centroid per row (lowest index on ties)."""
    sq = np.sum(centroids * centroids, axis=1)
    dists = sq[None, :] - 2.0 * (matrix @ centroids.T)
    return np.argmin(dists, axis=1).astype(np.intp)
