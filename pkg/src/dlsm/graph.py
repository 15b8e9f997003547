"""Directed graph data model: ingestion, preprocessing, edge splits and descriptive statistics."""

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import (
    DataError,
    EmptyGraphError,
    ParseError,
    SamplingExhaustedError,
    UndefinedDensityError,
)
from .rng import substream


@dataclass
class DirectedGraph:
    """Binary directed graph on nodes ``0..n-1``.

    Attributes:
        n: number of nodes.
        edges: ``(m, 2)`` int array of ``(src, dst)`` pairs, sorted and unique.
        attributes: optional ``(n, p)`` node feature matrix.
        labels: original node label of every index, in first-appearance order.
    """

    n: int
    edges: np.ndarray
    attributes: Optional[np.ndarray] = None
    labels: list = field(default_factory=list)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.n < 1:
            raise EmptyGraphError("graph has no nodes")
        if edges.size and (edges.min() < 0 or edges.max() >= self.n):
            raise DataError(f"edge index out of range [0, {self.n})")
        codes = np.unique(edges[:, 0] * self.n + edges[:, 1])
        self.edges = np.stack([codes // self.n, codes % self.n], axis=1)
        if not self.labels:
            self.labels = [str(i) for i in range(self.n)]
        if len(self.labels) != self.n:
            raise DataError("labels must name every node")
        if self.attributes is not None:
            self.attributes = np.asarray(self.attributes, dtype=np.float64)
            if self.attributes.shape[0] != self.n:
                raise DataError("attribute matrix must have one row per node")

    @property
    def m(self):
        return len(self.edges)

    @property
    def id_map(self):
        return {label: i for i, label in enumerate(self.labels)}

    def adjacency(self, dtype=np.float64):
        """Sparse CSR adjacency with ``a_ij = 1`` for each edge ``i -> j``."""
        data = np.ones(self.m, dtype=dtype)
        return sp.csr_matrix((data, (self.edges[:, 0], self.edges[:, 1])), shape=(self.n, self.n))

    def out_degree(self):
        return np.bincount(self.edges[:, 0], minlength=self.n)

    def in_degree(self):
        return np.bincount(self.edges[:, 1], minlength=self.n)

    def edge_codes(self):
        return self.edges[:, 0] * self.n + self.edges[:, 1]

    def with_edges(self, edges):
        """Same node set and attributes, different edge set."""
        return DirectedGraph(self.n, edges, self.attributes, list(self.labels))

    def symmetrized(self):
        both = np.concatenate([self.edges, self.edges[:, ::-1]])
        return self.with_edges(both)


def load_edge_list(path, directed=True):
    """Read a whitespace-separated edge list.

    Lines starting with ``#`` and blank lines are ignored. Node labels are
    arbitrary strings, remapped to contiguous indices in order of first
    appearance. Duplicate edges are collapsed; self-loops are kept until
    :func:`preprocess`.

    Args:
        path: text file with one ``src dst`` pair per line.
        directed: if False every edge is inserted in both directions.

    Raises:
        ParseError: a line does not hold exactly two labels.
        EmptyGraphError: the file holds no edges.
    """
    path = Path(path)
    index = {}
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected 2 node labels, got {len(parts)}", path, lineno)
            ids = []
            for label in parts:
                if label not in index:
                    index[label] = len(index)
                ids.append(index[label])
            pairs.append(ids)
    if not pairs:
        raise EmptyGraphError(f"{path}: no edges")
    edges = np.asarray(pairs, dtype=np.int64)
    if not directed:
        edges = np.concatenate([edges, edges[:, ::-1]])
    return DirectedGraph(len(index), edges, labels=list(index))


def load_attributes(path, graph):
    """Attach a node feature matrix read from CSV (label, feature columns...)."""
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or rec[0].startswith("#"):
                continue
            try:
                rows[rec[0].strip()] = [float(v) for v in rec[1:]]
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ParseError("non-numeric feature", path, lineno) from None
    missing = [lab for lab in graph.labels if lab not in rows]
    if missing:
        raise DataError(f"{path}: no attributes for {len(missing)} node(s), e.g. {missing[0]!r}")
    X = np.array([rows[lab] for lab in graph.labels], dtype=np.float64)
    return DirectedGraph(graph.n, graph.edges, X, list(graph.labels))


def load_labels(path):
    """Read ground-truth communities: one ``node community`` pair per line."""
    truth = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise ParseError("expected 'node community'", path, lineno)
            truth[parts[0]] = parts[1]
    if not truth:
        raise DataError(f"{path}: no labels")
    return truth


def preprocess(g):
    """Drop self-loops, then nodes with no remaining edges, and re-index."""
    edges = g.edges[g.edges[:, 0] != g.edges[:, 1]]
    deg = np.bincount(edges.ravel(), minlength=g.n)
    keep = np.flatnonzero(deg > 0)
    if keep.size == 0:
        raise EmptyGraphError("no nodes left after removing loops and isolated nodes")
    remap = np.full(g.n, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    X = None if g.attributes is None else g.attributes[keep]
    return DirectedGraph(int(keep.size), remap[edges], X, [g.labels[i] for i in keep])


@dataclass
class EdgeSplit:
    """Disjoint train/validation/test positives plus matched negatives."""

    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    seed: int
    ratios: tuple = (0.85, 0.10, 0.05)

    def arrays(self):
        return {
            "train_pos": self.train_pos,
            "val_pos": self.val_pos,
            "test_pos": self.test_pos,
            "val_neg": self.val_neg,
            "test_neg": self.test_neg,
        }

    def split_id(self):
        import hashlib

        h = hashlib.sha256()
        for name, arr in self.arrays().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def _codes_to_pairs(codes, n):
    codes = np.asarray(codes, dtype=np.int64)
    return np.stack([codes // n, codes % n], axis=1)


def sample_non_edges(n, forbidden_codes, count, rng):
    """Uniformly sample ``count`` distinct ordered pairs ``i != j`` not in ``forbidden_codes``.

    Raises:
        SamplingExhaustedError: fewer than ``count`` candidate non-edges exist.
    """
    forbidden = np.unique(np.asarray(forbidden_codes, dtype=np.int64))
    available = n * (n - 1) - forbidden.size
    if count > available:
        raise SamplingExhaustedError(f"need {count} non-edges, only {available} exist")
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if available < 4 * count or n * n <= 1 << 20:
        # enumerate when rejection would be slow or the pair space is small
        all_codes = np.arange(n * n, dtype=np.int64)
        mask = all_codes // n != all_codes % n
        mask[forbidden] = False
        pool = all_codes[mask]
        return _codes_to_pairs(rng.choice(pool, size=count, replace=False), n)
    chosen = []
    seen = set()
    forbidden_set = set(forbidden.tolist())
    while len(chosen) < count:
        batch = rng.integers(0, n, size=(2 * (count - len(chosen)) + 16, 2))
        for i, j in batch:
            if i == j:
                continue
            c = int(i) * n + int(j)
            if c in forbidden_set or c in seen:
                continue
            seen.add(c)
            chosen.append(c)
            if len(chosen) == count:
                break
    return _codes_to_pairs(chosen, n)


def split_edges(g, ratios=(0.85, 0.10, 0.05), seed=0):
    """Random train/test/validation partition of the edges.

    Test and validation sizes are ``round(ratio * m)``; the training set takes
    the remainder. Negatives are drawn uniformly from ordered non-edges of the
    full graph (never from held-out positives), with one negative per held-out
    positive and no pair repeated across the validation and test sets.

    Args:
        g: preprocessed graph.
        ratios: ``(train, test, val)`` fractions summing to one.
        seed: master seed; the split uses its ``"split"`` substream.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise DataError(f"split ratios must be three non-negative fractions summing to 1, got {ratios}")
    m = g.m
    n_test = _round_half_up(ratios[1] * m)
    n_val = _round_half_up(ratios[2] * m)
    n_train = m - n_test - n_val
    if min(n_train, n_test, n_val) < 1:
        raise DataError(f"{m} edges are too few for ratios {ratios}")
    rng = substream(seed, "split")
    perm = rng.permutation(m)
    test_pos = g.edges[np.sort(perm[:n_test])]
    val_pos = g.edges[np.sort(perm[n_test : n_test + n_val])]
    train_pos = g.edges[np.sort(perm[n_test + n_val :])]
    neg = sample_non_edges(g.n, g.edge_codes(), n_test + n_val, rng)
    return EdgeSplit(train_pos, val_pos, test_pos, neg[n_test:], neg[:n_test], int(seed), ratios)


@dataclass
class GraphStats:
    n: int
    m: int
    cc: float
    d_max_out: int
    d_max_in: int
    d_avg: float
    ed: float
    rr: float

    # column names of the descriptive-statistics table
    TABLE_FIELDS = {
        "n": "|V|",
        "m": "|E|",
        "cc": "CC",
        "d_max_out": "d_max^out",
        "d_max_in": "d_max^in",
        "d_avg": "d_avg",
        "ed": "ED",
        "rr": "RR",
    }

    def to_dict(self):
        return {self.TABLE_FIELDS[k]: v for k, v in asdict(self).items()}

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def directed_clustering(g):
    """Per-node directed clustering coefficient of Fagiolo (2007) on the binary adjacency.

    ``C_i = [(A + A^T)^3]_ii / (2 [d_i^tot (d_i^tot - 1) - 2 d_i^<->])``, zero
    where the denominator vanishes.
    """
    A = g.adjacency()
    S = (A + A.T).tocsr()
    cycles = np.asarray((S @ S).multiply(S).sum(axis=1)).ravel()
    d_tot = g.out_degree() + g.in_degree()
    d_bil = np.asarray(A.multiply(A.T).sum(axis=1)).ravel()
    denom = 2.0 * (d_tot * (d_tot - 1) - 2 * d_bil)
    out = np.zeros(g.n)
    ok = denom > 0
    out[ok] = cycles[ok] / denom[ok]
    return out


def descriptive_stats(g):
    """Node/edge counts, clustering, degree extremes, density and reciprocity."""
    if g.n < 2:
        raise UndefinedDensityError("edge density needs at least two nodes")
    m = g.m
    A = g.adjacency()
    reciprocal = A.multiply(A.T).sum()
    return GraphStats(
        n=int(g.n),
        m=int(m),
        cc=float(directed_clustering(g).mean()),
        d_max_out=int(g.out_degree().max()),
        d_max_in=int(g.in_degree().max()),
        d_avg=m / g.n,
        ed=m / (g.n * (g.n - 1)),
        rr=float(reciprocal / m) if m else 0.0,
    )
