"""Immutable CSR graphs and the symmetric-normalized propagation operator.

Self-loops are never stored. The propagation kernel adds the self-loop
term analytically, so ``propagate`` applies ``D^-1/2 (A + I) D^-1/2`` with
``D = 1 + degree``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentationParams:
    """Edge removal and attribute masking probabilities for one corrupted view."""

    edge_removal_prob: float = 0.2
    attr_mask_prob: float = 0.3
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("edge_removal_prob", "attr_mask_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class AugmentedDegrees:
    dhat: np.ndarray
    inv_sqrt: np.ndarray


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted graph with dense node features.

    ``adjacency`` is a canonical CSR matrix holding both directions of every
    edge, no duplicates and no self-loops. Features are stored as float32;
    every computation casts to float64 through :attr:`X`.
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "features", np.array(self.features, dtype=np.float32, order="C")
        )
        if self.labels is not None:
            object.__setattr__(self, "labels", np.array(self.labels, dtype=np.int64))
        adj = self.adjacency
        n = adj.shape[0]
        if adj.shape != (n, n):
            raise ValueError(f"adjacency must be square, got {adj.shape}")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError(
                f"features must have shape ({n}, f), got {self.features.shape}"
            )
        if self.labels is not None:
            if self.labels.shape != (n,):
                raise ValueError(f"labels must have length {n}, got {self.labels.shape}")
            if n and self.labels.min() < 0:
                raise ValueError("labels must be non-negative")
        if adj.diagonal().any():
            raise ValueError("self-loops must not be stored")
        if (adj != adj.T).nnz:
            raise ValueError("adjacency must be symmetric")
        for arr in (adj.data, adj.indices, adj.indptr, self.features):
            arr.flags.writeable = False
        if self.labels is not None:
            self.labels.flags.writeable = False

    @classmethod
    def from_edges(cls, n, edges, features, labels=None):
        """Build a graph from an iterable of ``(u, v)`` pairs.

        Edges are symmetrized; duplicates and self-loops are dropped.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError(f"edge endpoint out of range for n={n}")
        edges = edges[edges[:, 0] != edges[:, 1]]
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        adj = sp.csr_matrix(
            (np.ones(rows.size, dtype=np.float64), (rows, cols)), shape=(n, n)
        )
        adj.sum_duplicates()
        adj.data[:] = 1.0
        adj.sort_indices()
        feats = np.ascontiguousarray(np.asarray(features, dtype=np.float32))
        if feats.ndim == 1:
            feats = feats.reshape(n, -1)
        lab = None if labels is None else np.asarray(labels, dtype=np.int64).copy()
        return cls(adj, feats, lab)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def f(self) -> int:
        return self.features.shape[1]

    @cached_property
    def X(self) -> np.ndarray:
        """Features promoted to float64."""
        x = self.features.astype(np.float64)
        x.flags.writeable = False
        return x

    @cached_property
    def degree(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr)

    @cached_property
    def degrees(self) -> AugmentedDegrees:
        dhat = 1.0 + self.degree.astype(np.float64)
        return AugmentedDegrees(dhat=dhat, inv_sqrt=1.0 / np.sqrt(dhat))

    @property
    def num_edges(self) -> int:
        return self.adjacency.nnz // 2

    def edge_list(self) -> np.ndarray:
        """Each undirected edge once, as ``(u, v)`` with ``u < v``."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.stack([coo.row[order], coo.col[order]], axis=1).astype(np.int64)

    def with_features(self, features) -> "Graph":
        return Graph(self.adjacency, np.ascontiguousarray(features, dtype=np.float32), self.labels)

    def isolated_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.degree == 0)

    def is_connected(self) -> bool:
        n_comp, _ = sp.csgraph.connected_components(self.adjacency, directed=False)
        return n_comp == 1

    def dense_operator(self) -> np.ndarray:
        """Dense ``D^-1/2 (A+I) D^-1/2``; for oracles on small graphs only."""
        inv_sqrt = self.degrees.inv_sqrt
        a_hat = self.adjacency.toarray() + np.eye(self.n)
        return inv_sqrt[:, None] * a_hat * inv_sqrt[None, :]


def propagate(g: Graph, x: np.ndarray, steps: int = 1) -> np.ndarray:
    """Apply the normalized operator ``steps`` times to the columns of ``x``."""
    inv_sqrt = g.degrees.inv_sqrt[:, None]
    out = np.asarray(x, dtype=np.float64)
    for _ in range(steps):
        y = inv_sqrt * out
        out = inv_sqrt * (g.adjacency @ y + y)
    return out


def smooth_features(g: Graph, s: int) -> np.ndarray:
    """Laplacian smoothing: ``(I - D^-1/2 L D^-1/2)^s X`` as ``s`` sparse passes."""
    if s < 0:
        raise ValueError(f"smoothing steps must be >= 0, got {s}")
    if s == 0:
        return g.X.copy()
    return propagate(g, g.X, s)


def connect_isolated_nodes(g: Graph, seed: int = 0) -> Graph:
    """Attach each isolated node to one uniformly drawn non-isolated node."""
    isolated = g.isolated_nodes()
    if isolated.size == 0:
        return g
    anchors = np.flatnonzero(g.degree > 0)
    if anchors.size == 0:
        if g.n == 1:
            return g
        raise ValueError("no anchor node available")
    rng = np.random.default_rng(seed)
    targets = anchors[rng.integers(0, anchors.size, size=isolated.size)]
    logger.debug("connecting %d isolated nodes", isolated.size)
    new_edges = np.stack([isolated, targets], axis=1)
    edges = np.concatenate([g.edge_list(), new_edges])
    return Graph.from_edges(g.n, edges, g.features, g.labels)


def augment_contrastive(g: Graph, params: AugmentationParams) -> Graph:
    """Corrupted view: drop undirected edges, zero a shared set of feature dims.

    Draw order from ``default_rng(params.rng_seed)``: one uniform per
    undirected edge (in :meth:`Graph.edge_list` order), then one uniform per
    feature dimension. An edge is kept when its draw is ``>= edge_removal_prob``
    and a dimension survives when its draw is ``>= attr_mask_prob``.
    """
    rng = np.random.default_rng(params.rng_seed)
    edges = g.edge_list()
    keep = rng.random(edges.shape[0]) >= params.edge_removal_prob
    mask = (rng.random(g.f) >= params.attr_mask_prob).astype(np.float32)
    return Graph.from_edges(g.n, edges[keep], g.features * mask[None, :], g.labels)


def induced_subgraph(g: Graph, nodes) -> tuple[Graph, np.ndarray]:
    """Subgraph on ``nodes``; new id ``i`` corresponds to ``nodes[i]``."""
    nodes = np.asarray(nodes, dtype=np.int64).ravel()
    if nodes.size == 0:
        raise ValueError("induced_subgraph needs a nonempty node set")
    if nodes.min() < 0 or nodes.max() >= g.n:
        raise ValueError("node id out of range")
    if np.unique(nodes).size != nodes.size:
        raise ValueError("node ids must be distinct")
    sub = g.adjacency[nodes][:, nodes].tocsr()
    sub.sort_indices()
    labels = None if g.labels is None else g.labels[nodes].copy()
    return Graph(sub, g.features[nodes].copy(), labels), nodes.copy()


def disjoint_union(graphs) -> tuple[Graph, np.ndarray]:
    """Block-diagonal union; returns the graph and each block's start offset."""
    graphs = list(graphs)
    offsets = np.cumsum([0] + [g.n for g in graphs])
    adj = sp.block_diag([g.adjacency for g in graphs], format="csr")
    adj.sort_indices()
    feats = np.concatenate([g.features for g in graphs])
    labels = None
    if all(g.labels is not None for g in graphs):
        labels = np.concatenate([g.labels for g in graphs])
    return Graph(adj, feats, labels), offsets[:-1]
