"""Normalized bipartite graphs and edge dropout.

Propagation runs over the square operator on the stacked node space
``[left nodes; right nodes]``.  For a plain bipartite graph this is the
block matrix ``[[0, A], [A^T, 0]]`` with ``A[l, r] = 1/sqrt(deg(l) deg(r))``,
so one application moves left messages to the right side and vice versa.
Optional self-loops and bundle-bundle edges live in the same stacked space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .dataset import BundleDataset

AUGMENTATIONS = ("OP", "ED", "MD")


@dataclass(frozen=True)
class AugmentationConfig:
    mode: str = "OP"
    dropout_ratio: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in AUGMENTATIONS:
            raise ValueError(f"augmentation mode must be one of {AUGMENTATIONS}, got {self.mode!r}")
        if not 0.0 <= self.dropout_ratio < 1.0:
            raise ValueError(f"dropout ratio must lie in [0, 1), got {self.dropout_ratio}")

    @property
    def rho(self) -> float:
        return 0.0 if self.mode == "OP" else self.dropout_ratio


class CSR:
    """Minimal CSR container handed to the kernels."""

    __slots__ = ("indptr", "indices", "data", "shape", "_transposed")

    def __init__(self, mat: sp.spmatrix):
        mat = sp.csr_matrix(mat)
        mat.sum_duplicates()
        mat.sort_indices()
        self.indptr = mat.indptr.astype(np.int64)
        self.indices = mat.indices.astype(np.int64)
        self.data = mat.data.astype(np.float64)
        self.shape = mat.shape
        self._transposed = None

    @property
    def nnz(self) -> int:
        return len(self.data)

    def matmul(self, dense: np.ndarray, backend=None) -> np.ndarray:
        if dense.shape[0] != self.shape[1]:
            raise ValueError(f"shape mismatch: {self.shape} @ {dense.shape}")
        if self.nnz == 0:
            return np.zeros((self.shape[0], dense.shape[1]), dtype=dense.dtype)
        return kernels.csr_matmul(self.indptr, self.indices, self.data, dense,
                                  self.shape[0], backend=backend)

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    def transpose(self) -> "CSR":
        if self._transposed is None:
            self._transposed = CSR(self.to_scipy().T)
            self._transposed._transposed = self
        return self._transposed


@dataclass(eq=False)
class NormalizedBipartiteGraph:
    """Left-right edges with symmetric degree normalization.

    ``edges`` holds ``(left, right)`` id pairs sorted by left then right id and
    ``weights`` their normalized weights.  ``extra_edges``/``extra_weights``
    hold optional self-loops and right-right edges in stacked indexing
    (right node ``r`` is ``left_count + r``), stored once per unordered pair.
    """

    left_count: int
    right_count: int
    edges: np.ndarray
    weights: np.ndarray
    left_degrees: np.ndarray
    right_degrees: np.ndarray
    extra_edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    extra_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    _operator: CSR | None = field(default=None, repr=False)
    _dropout_cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.left_count + self.right_count

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def triples(self):
        return [(int(a), int(b), float(w)) for (a, b), w in zip(self.edges, self.weights)]

    def biadjacency(self) -> sp.csr_matrix:
        """The ``left_count x right_count`` weight matrix of the bipartite edges."""
        return sp.csr_matrix(
            (self.weights, (self.edges[:, 0], self.edges[:, 1])),
            shape=(self.left_count, self.right_count))

    def operator(self) -> CSR:
        """Symmetric propagation operator over the stacked node space."""
        if self._operator is None:
            n = self.num_nodes
            rows = [self.edges[:, 0], self.edges[:, 1] + self.left_count]
            cols = [self.edges[:, 1] + self.left_count, self.edges[:, 0]]
            vals = [self.weights, self.weights]
            if len(self.extra_edges):
                a, b = self.extra_edges[:, 0], self.extra_edges[:, 1]
                off = a != b
                rows += [a, b[off]]
                cols += [b, a[off]]
                vals += [self.extra_weights, self.extra_weights[off]]
            mat = sp.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(n, n))
            self._operator = CSR(mat)
        return self._operator

    def dense_operator(self) -> np.ndarray:
        return self.operator().to_scipy().toarray()

    def dump(self, path: str):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for a, b, w in self.triples():
                fh.write(f"{a}\t{b}\t{w!r}\n")


def _normalize(pairs, left_count, right_count, extra=None, extra_w=None):
    """Symmetric degree normalization of a bipartite edge set plus optional extras."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs):
        pairs = np.unique(pairs, axis=0)
    left_deg = np.bincount(pairs[:, 0], minlength=left_count).astype(np.float64)
    right_deg = np.bincount(pairs[:, 1], minlength=right_count).astype(np.float64)
    deg = np.concatenate([left_deg, right_deg])
    if extra is None:
        extra = np.zeros((0, 2), dtype=np.int64)
        extra_w = np.zeros(0)
    if len(extra):
        a, b = extra[:, 0], extra[:, 1]
        np.add.at(deg, a, extra_w)
        off = a != b
        np.add.at(deg, b[off], extra_w[off])
    stacked_r = pairs[:, 1] + left_count
    with np.errstate(divide="ignore"):
        weights = 1.0 / np.sqrt(deg[pairs[:, 0]] * deg[stacked_r])
        extra_weights = extra_w / np.sqrt(deg[extra[:, 0]] * deg[extra[:, 1]])
    return NormalizedBipartiteGraph(
        left_count, right_count, pairs, weights,
        left_deg.astype(np.int64), right_deg.astype(np.int64),
        extra_edges=extra, extra_weights=extra_weights)


def bundle_overlap(dataset: BundleDataset) -> sp.coo_matrix:
    """Upper-triangular matrix of shared-item counts between distinct bundles."""
    z = sp.csr_matrix(
        (np.ones(len(dataset.bundle_item)), (dataset.bundle_item[:, 0], dataset.bundle_item[:, 1])),
        shape=(dataset.num_bundles, dataset.num_items))
    return sp.triu(z @ z.T, k=1).tocoo()


def build_ub_graph(dataset: BundleDataset, include_self_connections: bool = False,
                   include_bundle_bundle: bool = False) -> NormalizedBipartiteGraph:
    """User-bundle graph over X.

    With ``include_bundle_bundle`` the bundles are also linked to each other
    with weight equal to their number of shared items; with
    ``include_self_connections`` every node gets a unit self-loop.  Both are
    added before degrees are counted.
    """
    m, n = dataset.num_users, dataset.num_bundles
    extra, extra_w = [], []
    if include_bundle_bundle:
        ov = bundle_overlap(dataset)
        extra.append(np.stack([ov.row + m, ov.col + m], axis=1).astype(np.int64))
        extra_w.append(ov.data.astype(np.float64))
    if include_self_connections:
        nodes = np.arange(m + n, dtype=np.int64)
        extra.append(np.stack([nodes, nodes], axis=1))
        extra_w.append(np.ones(m + n))
    if extra:
        ex = np.concatenate(extra)
        ew = np.concatenate(extra_w)
        order = np.lexsort((ex[:, 1], ex[:, 0]))
        return _normalize(dataset.user_bundle, m, n, ex[order], ew[order])
    return _normalize(dataset.user_bundle, m, n)


def build_ui_graph(dataset: BundleDataset) -> NormalizedBipartiteGraph:
    return _normalize(dataset.user_item, dataset.num_users, dataset.num_items)


def build_graph(pairs, left_count: int, right_count: int) -> NormalizedBipartiteGraph:
    return _normalize(pairs, left_count, right_count)


def dropout_keep_count(num_edges: int, ratio: float) -> int:
    # tolerance guards ceil against products like 0.7 * 10 = 7.000000000000001
    return min(num_edges, math.ceil((1.0 - ratio) * num_edges - 1e-9))


def edge_dropout(graph: NormalizedBipartiteGraph, ratio: float, seed) -> NormalizedBipartiteGraph:
    """Keep ``ceil((1 - ratio) |E|)`` bipartite edges chosen uniformly.

    Surviving edges keep their original weights.  Self-loops and
    bundle-bundle edges are never dropped.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"dropout ratio must lie in [0, 1), got {ratio}")
    if ratio == 0.0:
        return graph
    keep = dropout_keep_count(graph.num_edges, ratio)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(graph.num_edges, size=keep, replace=False))
    return NormalizedBipartiteGraph(
        graph.left_count, graph.right_count, graph.edges[idx], graph.weights[idx],
        graph.left_degrees, graph.right_degrees,
        extra_edges=graph.extra_edges, extra_weights=graph.extra_weights)


def cached_edge_dropout(graph: NormalizedBipartiteGraph, ratio: float, seed_key: tuple):
    """``edge_dropout`` memoized on the graph for the most recent ``seed_key``."""
    key = (ratio, seed_key)
    hit = graph._dropout_cache.get("key")
    if hit != key:
        graph._dropout_cache.clear()
        graph._dropout_cache["key"] = key
        graph._dropout_cache["graph"] = edge_dropout(graph, ratio, np.random.SeedSequence(seed_key))
    return graph._dropout_cache["graph"]


def build_pooling_from_pairs(bundle_item, num_bundles: int, num_items: int) -> CSR:
    """Bundle x item averaging matrix: row b holds 1/|items(b)| on b's items.

    Bundles without items get an all-zero row.
    """
    bi = np.asarray(bundle_item, dtype=np.int64).reshape(-1, 2)
    sizes = np.bincount(bi[:, 0], minlength=num_bundles).astype(np.float64)
    vals = 1.0 / sizes[bi[:, 0]]
    return CSR(sp.coo_matrix((vals, (bi[:, 0], bi[:, 1])), shape=(num_bundles, num_items)))


def build_pooling(dataset: BundleDataset) -> CSR:
    return build_pooling_from_pairs(dataset.bundle_item, dataset.num_bundles, dataset.num_items)
