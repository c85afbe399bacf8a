"""Attributed graphs, adjacency operators and class-imbalance statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.sparse as sp


class GraphInputError(ValueError):
    """Raised when edges, features or labels violate the graph contract."""


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    """Undirected, unweighted graph with dense node features and class labels.

    ``adjacency`` is a symmetric 0/1 CSR matrix without self-loops and with
    sorted column indices. Build instances with :func:`build_graph`.
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return self.adjacency.nnz // 2

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr).astype(np.int64)

    def edge_list(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with ``u < v``, row-major sorted."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        edges = np.stack([coo.row, coo.col], axis=1).astype(np.int64)
        return edges[np.lexsort((edges[:, 1], edges[:, 0]))]


@dataclass(frozen=True)
class ClassStats:
    counts: np.ndarray
    head_class: int
    tail_class: int
    r_imb: float


def build_graph(
    edges: Iterable[tuple[int, int]] | np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int | None = None,
) -> AttributedGraph:
    """Validate inputs and assemble an :class:`AttributedGraph`.

    Edges are symmetrized and deduplicated; self-loops are dropped. The node
    count is taken from ``labels``.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise GraphInputError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise GraphInputError("labels must be integer class ids")
    labels = labels.astype(np.int64)
    n = labels.shape[0]

    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != n:
        raise GraphInputError(
            f"features must have shape ({n}, D), got {features.shape}"
        )
    if not np.all(np.isfinite(features)):
        bad = int(np.argwhere(~np.isfinite(features))[0, 0])
        raise GraphInputError(f"non-finite feature value at node {bad}")

    if num_classes is None:
        num_classes = int(labels.max()) + 1 if n else 0
    if n and (labels.min() < 0 or labels.max() >= num_classes):
        bad = int(np.argmax((labels < 0) | (labels >= num_classes)))
        raise GraphInputError(
            f"label {labels[bad]} of node {bad} outside [0, {num_classes})"
        )
    counts = np.bincount(labels, minlength=num_classes)
    if np.any(counts == 0):
        missing = int(np.argmin(counts))
        raise GraphInputError(f"class {missing} has no nodes")

    edge_arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges)
    edge_arr = edge_arr.reshape(-1, 2).astype(np.int64) if edge_arr.size else np.zeros((0, 2), np.int64)
    if edge_arr.size and (edge_arr.min() < 0 or edge_arr.max() >= n):
        bad = edge_arr[np.argmax(((edge_arr < 0) | (edge_arr >= n)).any(axis=1))]
        raise GraphInputError(f"edge ({bad[0]}, {bad[1]}) references a node outside [0, {n})")

    edge_arr = edge_arr[edge_arr[:, 0] != edge_arr[:, 1]]
    rows = np.concatenate([edge_arr[:, 0], edge_arr[:, 1]])
    cols = np.concatenate([edge_arr[:, 1], edge_arr[:, 0]])
    keys = np.unique(rows * n + cols)
    rows, cols = keys // max(n, 1), keys % max(n, 1)
    adjacency = sp.csr_matrix(
        (np.ones(keys.size, dtype=np.float64), (rows, cols)), shape=(n, n)
    )
    adjacency.sort_indices()

    features = features.copy()
    features.setflags(write=False)
    labels.setflags(write=False)
    return AttributedGraph(adjacency, features, labels, int(num_classes))


def class_stats(graph: AttributedGraph) -> ClassStats:
    """Per-class counts, head/tail classes and the imbalance ratio max/min.

    Ties go to the smallest class id (``argmax``/``argmin`` return the first hit).
    """
    counts = np.bincount(graph.labels, minlength=graph.num_classes)
    head = int(np.argmax(counts))
    tail = int(np.argmin(counts))
    return ClassStats(counts, head, tail, float(counts[head] / counts[tail]))


def degrees(graph: AttributedGraph) -> np.ndarray:
    """Number of distinct neighbours of every node (self-loops never count)."""
    return graph.degrees


def normalized_adjacency(graph: AttributedGraph) -> sp.csr_matrix:
    """Symmetric GCN operator ``D^-1/2 (A + I) D^-1/2`` with D the degrees of A + I."""
    cached = graph._cache.get("gcn")
    if cached is not None:
        return cached
    n = graph.num_nodes
    a_hat = (graph.adjacency + sp.identity(n, format="csr")).tocsr()
    d_inv_sqrt = 1.0 / np.sqrt(graph.degrees + 1.0)
    out = sp.diags(d_inv_sqrt) @ a_hat @ sp.diags(d_inv_sqrt)
    out = out.tocsr()
    out.sort_indices()
    graph._cache["gcn"] = out
    return out


def mean_aggregation_adjacency(graph: AttributedGraph) -> sp.csr_matrix:
    """Row-stochastic neighbour averaging; isolated nodes get an all-zero row."""
    cached = graph._cache.get("mean")
    if cached is not None:
        return cached
    deg = graph.degrees.astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    out = (sp.diags(inv) @ graph.adjacency).tocsr()
    out.sort_indices()
    graph._cache["mean"] = out
    return out
