"""Symmetric adjacency normalization and a bias-free two-layer GCN."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .numerics import tensor as T
from .numerics.nn import Module, Parameter, glorot_init
from .numerics.tensor import DimensionError, Tensor


def normalized_adjacency(n: int, rows, cols, weights=None) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 for an undirected graph given one entry per edge.

    Each (row, col) pair is mirrored, so callers pass every edge once.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    w = np.ones(len(rows)) if weights is None else np.asarray(weights, dtype=np.float64)
    if (rows == cols).any():
        raise ValueError("self-loops are added by normalization; do not store them")
    diag = np.arange(n)
    a = sp.coo_matrix(
        (np.concatenate([w, w, np.ones(n)]),
         (np.concatenate([rows, cols, diag]), np.concatenate([cols, rows, diag]))),
        shape=(n, n)).tocsr()
    a.sum_duplicates()
    inv_sqrt = 1.0 / np.sqrt(np.asarray(a.sum(axis=1)).ravel())
    coo = a.tocoo()
    # scale by the commutative product s_i * s_j so that the result is exactly symmetric
    scaled = coo.data * (inv_sqrt[coo.row] * inv_sqrt[coo.col])
    return sp.csr_matrix((scaled, (coo.row, coo.col)), shape=(n, n))


class GCN(Module):
    """H2 = act(Â relu(Â X W1) W2), no bias terms.

    With ``in_dim=None`` the node features are the identity, so ``Â X W1``
    reduces to ``Â W1`` and W1 has one row per node.
    """

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator,
                 output_relu: bool = False):
        self.w1 = Parameter(glorot_init(rng, (in_dim, hidden)))
        self.w2 = Parameter(glorot_init(rng, (hidden, out_dim)))
        self.output_relu = output_relu

    def __call__(self, adj, x: Tensor | np.ndarray | None = None) -> Tensor:
        if x is None:
            if adj.shape[0] != self.w1.shape[0]:
                raise DimensionError(f"identity features need {self.w1.shape[0]} nodes, got {adj.shape[0]}")
            xw = self.w1
        else:
            xw = T.matmul(x, self.w1)
        h = T.relu(T.spmm(adj, xw))
        out = T.spmm(adj, T.matmul(h, self.w2))
        return T.relu(out) if self.output_relu else out
