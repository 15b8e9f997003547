"""Directed GCN encoder producing one hidden state per layer."""

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import NumericOverflowError, ShapeError

ACTIVATIONS = {
    "leaky_relu": lambda x, slope=0.2: F.leaky_relu(x, slope),
    "relu": lambda x, slope=None: F.relu(x),
    "tanh": lambda x, slope=None: torch.tanh(x),
    "identity": lambda x, slope=None: x,
}


def normalize_adjacency(g):
    """``D_out^{-1/2} (A + I) D_in^{-1/2}`` as a scipy CSR matrix.

    Out-degrees are row sums and in-degrees column sums of ``A + I``, so every
    degree is at least one. On a symmetric graph this is the usual GCN
    renormalisation.
    """
    A = g.adjacency() + sp.identity(g.n, format="csr")
    d_out = np.asarray(A.sum(axis=1)).ravel()
    d_in = np.asarray(A.sum(axis=0)).ravel()
    return (sp.diags(d_out**-0.5) @ A @ sp.diags(d_in**-0.5)).tocsr()


def to_torch_sparse(mat, dtype=torch.float64):
    coo = mat.tocoo()
    idx = torch.from_numpy(np.vstack([coo.row, coo.col]).astype(np.int64))
    return torch.sparse_coo_tensor(idx, torch.as_tensor(coo.data, dtype=dtype), coo.shape, check_invariants=False).coalesce()


def _matmul(adj, H):
    if isinstance(adj, torch.Tensor) and adj.is_sparse:
        return torch.sparse.mm(adj, H)
    return adj @ H


def gcn_layer(adj, H, W, activation="leaky_relu", slope=0.2):
    """One propagation step ``f(adj @ H @ W)``.

    ``H`` may be None, meaning the identity feature matrix; the product then
    reduces to ``adj @ W``.
    """
    if H is None:
        if W.shape[0] != adj.shape[1]:
            raise ShapeError(f"identity features need W with {adj.shape[1]} rows, got {W.shape[0]}")
        out = _matmul(adj, W)
    else:
        if H.shape[0] != adj.shape[1] or H.shape[1] != W.shape[0]:
            raise ShapeError(f"cannot chain adj {tuple(adj.shape)}, H {tuple(H.shape)}, W {tuple(W.shape)}")
        # cheaper to shrink the feature width first
        out = _matmul(adj, H @ W) if W.shape[1] <= H.shape[1] else _matmul(adj, H) @ W
    return ACTIVATIONS[activation](out, slope)


class EncoderStack(nn.Module):
    """Stack of bias-free directed GCN layers.

    Args:
        in_dim: feature width of ``H^(0)`` (``n`` when features are absent).
        sizes: hidden widths ``K_1, ..., K_L``.
        activation: name from :data:`ACTIVATIONS`.
        slope: negative slope for leaky ReLU.
    """

    def __init__(self, in_dim, sizes, activation="leaky_relu", slope=0.2, generator=None, dtype=torch.float64):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = tuple(int(k) for k in sizes)
        self.activation = activation
        self.slope = slope
        dims = (int(in_dim),) + self.sizes
        self.weights = nn.ParameterList()
        for a, b in zip(dims[:-1], dims[1:]):
            w = torch.empty(a, b, dtype=dtype)
            bound = np.sqrt(6.0 / (a + b))
            w.uniform_(-bound, bound, generator=generator)
            self.weights.append(nn.Parameter(w))

    def forward(self, adj, features=None):
        hidden = []
        H = features
        for l, W in enumerate(self.weights):
            H = gcn_layer(adj, H, W, self.activation, self.slope)
            if not torch.isfinite(H).all():
                raise NumericOverflowError(f"non-finite activations in encoder layer {l + 1}")
            hidden.append(H)
        return hidden


def encode(g, stack, features=None):
    """Hidden states ``H^(1..L)``.

    Args:
        g: a graph (normalised here, its attributes used as features) or a
            ready normalised adjacency.
        stack: :class:`EncoderStack`.
        features: overrides graph attributes; None stands for ``H^(0) = I_n``.
    """
    if hasattr(g, "edges") and hasattr(g, "n"):
        if features is None and g.attributes is not None:
            features = torch.as_tensor(g.attributes, dtype=torch.float64)
        g = to_torch_sparse(normalize_adjacency(g))
    return stack(g, features)
