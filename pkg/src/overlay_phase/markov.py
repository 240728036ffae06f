"""Stationary vectors of column-stochastic chains."""

from __future__ import annotations

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ReducibleChainError


def closed_classes(P: np.ndarray) -> list[list[int]]:
    """Closed communicating classes of a column-stochastic matrix.

    ``P[i, j] > 0`` is an edge j -> i. A strongly connected component is
    closed when no edge leaves it.
    """
    adj = (P > 0).T.astype(np.int8)  # adj[j, i]: j -> i
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    leaves = np.ones(n_comp, dtype=bool)
    src, dst = np.nonzero(adj)
    cross = labels[src] != labels[dst]
    leaves[labels[src[cross]]] = False
    return [np.flatnonzero(labels == c).tolist() for c in range(n_comp) if leaves[c]]


def stationary_vector(P: np.ndarray) -> np.ndarray:
    """Unique h with P h = h, h >= 0, sum(h) = 1.

    Solved as the least-squares system [(P - I); 1^T] h = [0; 1], which is
    exact when the null space of P - I is one-dimensional. Raises
    :class:`ReducibleChainError` when there is more than one closed class.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    classes = closed_classes(P)
    if len(classes) > 1:
        raise ReducibleChainError(classes)
    A = np.vstack([P - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    h, *_ = np.linalg.lstsq(A, b, rcond=None)
    h = np.clip(h, 0.0, None)
    return h / h.sum()

