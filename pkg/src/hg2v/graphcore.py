"""Attributed graph data model and basic graph operators."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError

FEATURE_KINDS = ("continuous", "one-hot-label", "degree-fallback", "mixed", "constant")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    """Undirected weighted graph with a real feature matrix.

    ``edges`` holds each undirected pair once as ``(u, v)`` with ``u < v``;
    ``weights`` is aligned with it. Instances are immutable.
    """

    n: int
    edges: np.ndarray
    weights: np.ndarray
    features: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise DataError(f"graph needs at least one node, got n={n}")
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats[:, None]
        if weights.shape[0] != edges.shape[0]:
            raise DataError(f"{edges.shape[0]} edges but {weights.shape[0]} weights")
        if feats.shape[0] != n or feats.shape[1] < 1:
            raise DataError(f"features must be {n}xf with f>=1, got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise DataError("non-finite node features")
        if edges.size:
            if edges.min() < 0 or edges.max() >= n:
                raise DataError("edge endpoint out of range")
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise DataError("edges must be stored as (u, v) with u < v (no self-loops)")
            if np.unique(edges[:, 0] * n + edges[:, 1]).size != edges.shape[0]:
                raise DataError("duplicate undirected edge")
            if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
                raise DataError("edge weights must be finite and > 0")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "features", _frozen(feats))
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @classmethod
    def from_edges(cls, n, edges, features=None, weights=None, label=None) -> "AttributedGraph":
        """Build a graph from a possibly directed / duplicated edge list.

        Pairs are symmetrized, self-loops dropped, and the first weight seen
        for an undirected pair wins. Missing weights default to 1.0 and
        missing features to a constant column.
        """
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        w = np.ones(len(e)) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
        keep = e[:, 0] != e[:, 1]
        e, w = e[keep], w[keep]
        lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
        _, first = np.unique(lo * max(n, 1) + hi, return_index=True)
        first.sort()
        e = np.stack([lo[first], hi[first]], axis=1)
        if features is None:
            features = np.ones((n, 1))
        return cls(n, e, w[first], features, label)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric weighted adjacency matrix (CSR)."""
        u, v = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        vals = np.concatenate([self.weights, self.weights])
        a = sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        a.sort_indices()
        return a

    @cached_property
    def degrees(self) -> np.ndarray:
        """Weighted degrees."""
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    @cached_property
    def neighbors(self) -> list:
        a = self.adjacency
        return [a.indices[a.indptr[i]:a.indptr[i + 1]] for i in range(self.n)]

    def with_features(self, features) -> "AttributedGraph":
        return AttributedGraph(self.n, self.edges, self.weights, features, self.label)

    def with_label(self, label) -> "AttributedGraph":
        return AttributedGraph(self.n, self.edges, self.weights, self.features, label)

    def permute(self, perm) -> "AttributedGraph":
        """Relabel nodes: old node ``i`` becomes new node ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(self.n)):
            raise ValueError("perm must be a permutation of range(n)")
        e = perm[self.edges]
        lo, hi = e.min(axis=1), e.max(axis=1)
        feats = np.empty_like(self.features)
        feats[perm] = self.features
        return AttributedGraph(self.n, np.stack([lo, hi], axis=1), self.weights, feats, self.label)

    def remove_edges(self, idx) -> "AttributedGraph":
        keep = np.ones(self.num_edges, dtype=bool)
        keep[np.asarray(idx, dtype=np.int64)] = False
        return AttributedGraph(self.n, self.edges[keep], self.weights[keep], self.features, self.label)

    def edge_set(self) -> set:
        return {(int(u), int(v)) for u, v in self.edges}

    def __repr__(self):
        return f"AttributedGraph(n={self.n}, m={self.num_edges}, f={self.feature_dim}, label={self.label})"


@dataclass
class DatasetMeta:
    name: str
    num_classes: int
    feature_dim: int
    feature_kind: str = "continuous"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.feature_kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.feature_kind!r}")


def check_consistent(graphs: Sequence[AttributedGraph]) -> int:
    """Return the shared feature dimension or raise."""
    dims = {g.feature_dim for g in graphs}
    if len(dims) != 1:
        raise DataError(f"inconsistent feature dimensions across dataset: {sorted(dims)}")
    return dims.pop()


def normalize_features(graphs: Sequence[AttributedGraph], columns=None) -> list:
    """Standardize feature columns with dataset-wide mean and std.

    Zero-variance columns become 0. ``columns`` restricts the transform to a
    subset (used when continuous attributes sit next to one-hot labels).
    """
    if not graphs:
        return []
    f = check_consistent(graphs)
    cols = np.arange(f) if columns is None else np.asarray(columns, dtype=np.int64)
    stacked = np.concatenate([g.features[:, cols] for g in graphs], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    out = []
    for g in graphs:
        x = g.features.copy()
        z = (x[:, cols] - mean) / scale
        z[:, std == 0] = 0.0
        x[:, cols] = z
        out.append(g.with_features(x))
    return out


def normalized_adjacency(g: AttributedGraph) -> sp.csr_matrix:
    """D^{-1/2} (A + I) D^{-1/2} where D is the degree matrix of A + I."""
    a = g.adjacency + sp.identity(g.n, format="csr")
    d = np.asarray(a.sum(axis=1)).ravel()
    inv = sp.diags(1.0 / np.sqrt(d))
    out = (inv @ a @ inv).tocsr()
    out.sort_indices()
    return out


def laplacian(g: AttributedGraph) -> sp.csr_matrix:
    """Combinatorial Laplacian D - A."""
    return (sp.diags(g.degrees) - g.adjacency).tocsr()


def degree_features(g: AttributedGraph) -> np.ndarray:
    """Unweighted node degree as a single column."""
    return np.diff(g.adjacency.indptr).astype(np.float64)[:, None]


def block_diag(mats) -> sp.csr_matrix:
    return sp.block_diag(mats, format="csr")
