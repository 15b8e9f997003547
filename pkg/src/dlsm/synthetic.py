"""Synthetic directed graphs for tests and demos."""

import numpy as np

from .graph import DirectedGraph, preprocess
from .rng import substream


def _from_probabilities(P, rng, labels=None):
    n = P.shape[0]
    A = rng.random(P.shape) < P
    np.fill_diagonal(A, False)
    edges = np.argwhere(A).astype(np.int64)
    return DirectedGraph(n, edges, labels=labels if labels is not None else [str(i) for i in range(n)])


def planted_partition(n, k=2, p_in=0.1, p_out=0.005, seed=0):
    """Directed stochastic block model with ``k`` equal blocks.

    Returns:
        ``(graph, truth)`` with ``truth`` mapping node label to block.
    """
    rng = substream(seed, "synthetic")
    block = np.arange(n) % k
    rng.shuffle(block)
    P = np.where(block[:, None] == block[None, :], p_in, p_out)
    g = _from_probabilities(P, rng)
    truth = {g.labels[i]: int(block[i]) for i in range(n)}
    g = preprocess(g)
    return g, {lab: truth[lab] for lab in g.labels}


def power_law_weights(n, exponent, rng, w_min=1.0):
    """Pareto weights whose tail has density exponent ``exponent``."""
    return w_min * (1.0 - rng.random(n)) ** (-1.0 / (exponent - 1.0))


def chung_lu_directed(n=1000, exponent=2.5, avg_degree=8.0, seed=0, correlated=False):
    """Directed Chung-Lu graph with independent power-law out- and in-weights.

    ``p_ij = min(1, w_out_i w_in_j / W)``, scaled to the target mean degree.

    Args:
        correlated: reuse the out-weights as in-weights.
    """
    rng = substream(seed, "synthetic")
    w_out = power_law_weights(n, exponent, rng)
    w_in = w_out.copy() if correlated else power_law_weights(n, exponent, rng)
    w_out *= avg_degree * n / w_out.sum()
    w_in *= avg_degree * n / w_in.sum()
    P = np.minimum(1.0, np.outer(w_out, w_in) / (avg_degree * n))
    return preprocess(_from_probabilities(P, rng))


def degree_corrected_blocks(n=1222, k=2, avg_degree=15.6, mixing=0.1, reciprocity=0.25, exponent=2.3, seed=0):
    """Directed degree-corrected block model with a reciprocity boost.

    Meant as a stand-in with blog-network-like shape: two assortative
    communities, heavy-tailed degrees, and a share of mutual links.

    Returns:
        ``(graph, truth)``.
    """
    rng = substream(seed, "synthetic")
    block = np.arange(n) % k
    rng.shuffle(block)
    w_out = power_law_weights(n, exponent, rng)
    w_in = power_law_weights(n, exponent, rng)
    same = block[:, None] == block[None, :]
    mix = np.where(same, 1.0 - mixing, mixing / max(k - 1, 1))
    raw = np.outer(w_out, w_in) * mix
    np.fill_diagonal(raw, 0.0)
    one_way = avg_degree * n * (1.0 - reciprocity)
    P = np.minimum(1.0, raw * one_way / raw.sum())
    A = rng.random(P.shape) < P
    np.fill_diagonal(A, False)
    # reciprocate a fraction of edges so that the reciprocal rate is roughly as asked
    src, dst = np.nonzero(A)
    back = rng.random(src.size) < reciprocity
    A[dst[back], src[back]] = True
    np.fill_diagonal(A, False)
    labels = [str(i) for i in range(n)]
    g = preprocess(DirectedGraph(n, np.argwhere(A).astype(np.int64), labels=labels))
    return g, {lab: int(block[int(lab)]) for lab in g.labels}
