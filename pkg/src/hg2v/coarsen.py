"""Spectral graph coarsening into pyramids of quotient graphs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from .errors import NumericalError
from .graphcore import AttributedGraph, laplacian, normalized_adjacency

DENSE_EIGEN_CAP = 2000
DEFAULT_RATIO = 0.5
DEFAULT_K = 10


@dataclass(frozen=True, eq=False)
class PoolingMap:
    """Surjective map from fine nodes to coarse nodes (``group[u]``)."""

    fine_n: int
    coarse_n: int
    group: np.ndarray

    def __post_init__(self):
        group = np.asarray(self.group, dtype=np.int64).reshape(-1)
        if group.size != self.fine_n:
            raise ValueError(f"group has {group.size} entries for fine_n={self.fine_n}")
        if group.size and (group.min() < 0 or group.max() >= self.coarse_n):
            raise ValueError("group index out of range")
        if np.unique(group).size != self.coarse_n:
            raise ValueError("pooling map is not surjective")
        if self.coarse_n >= self.fine_n and not np.array_equal(group, np.arange(self.fine_n)):
            raise ValueError("a non-reducing pooling map must be the identity")
        group.setflags(write=False)
        object.__setattr__(self, "group", group)

    @classmethod
    def identity(cls, n: int) -> "PoolingMap":
        return cls(n, n, np.arange(n))

    @property
    def is_identity(self) -> bool:
        return self.coarse_n == self.fine_n

    def matrix(self) -> sp.csr_matrix:
        """coarse_n x fine_n 0/1 membership matrix."""
        return sp.csr_matrix(
            (np.ones(self.fine_n), (self.group, np.arange(self.fine_n))),
            shape=(self.coarse_n, self.fine_n),
        )


@dataclass(eq=False)
class Pyramid:
    levels: List[AttributedGraph]
    pools: List[PoolingMap]
    bases: Optional[list] = None
    _norm_adj: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.levels) != len(self.pools) + 1:
            raise ValueError("a pyramid has exactly one more level than pooling maps")
        for lvl, (fine, coarse, pool) in enumerate(zip(self.levels, self.levels[1:], self.pools)):
            if pool.fine_n != fine.n or pool.coarse_n != coarse.n:
                raise ValueError(f"pool {lvl} shape {pool.fine_n}->{pool.coarse_n} "
                                 f"does not match levels {fine.n}->{coarse.n}")

    @property
    def depth(self) -> int:
        return len(self.pools)

    def norm_adj(self, level: int) -> sp.csr_matrix:
        if level not in self._norm_adj:
            self._norm_adj[level] = normalized_adjacency(self.levels[level])
        return self._norm_adj[level]

    def sizes(self) -> list:
        return [g.n for g in self.levels]


def _dense_laplacian(g: AttributedGraph) -> np.ndarray:
    return laplacian(g).toarray()


def spectral_basis(g: AttributedGraph, k: int) -> np.ndarray:
    """First ``k`` Laplacian eigenvectors (ascending eigenvalue), orthonormal columns."""
    if not 1 <= k <= g.n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={g.n}")
    if g.n <= DENSE_EIGEN_CAP:
        try:
            _, vecs = scipy.linalg.eigh(_dense_laplacian(g), subset_by_index=[0, k - 1])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigensolver failed on {g.n}-node graph: {exc}") from exc
        return vecs
    try:
        vals, vecs = scipy.sparse.linalg.eigsh(laplacian(g).astype(float), k=k, which="SA",
                                               maxiter=100 * g.n, tol=1e-10)
    except scipy.sparse.linalg.ArpackNoConvergence as exc:
        raise NumericalError(f"eigensolver did not converge on {g.n}-node graph") from exc
    return vecs[:, np.argsort(vals)]


def quotient_graph(g: AttributedGraph, pool: PoolingMap) -> AttributedGraph:
    """Coarse graph with summed boundary weights and summed features."""
    m = pool.matrix()
    a = (m @ g.adjacency @ m.T).tocoo()
    keep = a.row < a.col
    feats = np.asarray(m @ g.features)
    return AttributedGraph(pool.coarse_n, np.stack([a.row[keep], a.col[keep]], axis=1),
                           a.data[keep], feats, g.label)


def _match_round(adj: sp.csr_matrix, basis: np.ndarray, budget: int):
    """Greedy lowest-cost matching on the current super graph.

    Returns the list of contracted pairs, at most ``budget`` of them.
    """
    a = sp.triu(adj, k=1).tocoo()
    if a.nnz == 0 or budget <= 0:
        return []
    i, j, w = a.row, a.col, a.data
    deg = np.asarray(adj.sum(axis=1)).ravel()
    diff = basis[i] - basis[j]
    cost = np.einsum("ij,ij->i", diff, diff) / (w * (1.0 / deg[i] + 1.0 / deg[j]))
    order = np.lexsort((j, i, cost))
    taken = np.zeros(adj.shape[0], dtype=bool)
    pairs = []
    for e in order:
        u, v = i[e], j[e]
        if taken[u] or taken[v]:
            continue
        taken[u] = taken[v] = True
        pairs.append((u, v))
        if len(pairs) == budget:
            break
    return pairs


def coarsen_once(g: AttributedGraph, ratio: float = DEFAULT_RATIO, k: int = DEFAULT_K):
    """Contract low-variation edges until about ``ceil((1 - ratio) n)`` nodes remain.

    Candidate edges are scored by ``|b_i - b_j|^2 / (w_ij (1/d_i + 1/d_j))``
    with ``b`` rows from the first ``k`` Laplacian eigenvectors; a greedy
    matching is contracted and the process repeats on the contracted graph
    while the target is not met. Ties break on (cost, lower endpoint).
    Returns ``(coarse_graph, pooling_map)``; when no edge can be contracted
    the identity map is returned.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    n = g.n
    target = max(1, math.ceil((1.0 - ratio) * n))
    basis = spectral_basis(g, min(n, k)) if n > 1 else np.zeros((1, 1))
    group = np.arange(n)
    adj = g.adjacency
    sup_basis = basis
    cur = n
    while cur > target:
        pairs = _match_round(adj, sup_basis, cur - target)
        if not pairs:
            break
        parent = np.arange(cur)
        for u, v in pairs:
            parent[max(u, v)] = min(u, v)
        # relabel super nodes by their smallest member, keeping order
        roots = np.unique(parent)
        relabel = np.searchsorted(roots, parent)
        group = relabel[group]
        cur = roots.size
        m = sp.csr_matrix((np.ones(relabel.size), (relabel, np.arange(relabel.size))),
                          shape=(cur, relabel.size))
        adj = (m @ adj @ m.T).tolil()
        adj.setdiag(0)
        adj = adj.tocsr()
        adj.eliminate_zeros()
        counts = np.bincount(group, minlength=cur).astype(float)
        sup_basis = np.zeros((cur, basis.shape[1]))
        np.add.at(sup_basis, group, basis)
        sup_basis /= counts[:, None]
    if cur == n:
        return g, PoolingMap.identity(n)
    pool = PoolingMap(n, cur, group)
    return quotient_graph(g, pool), pool


def build_pyramid(g: AttributedGraph, target_n: int = 1, max_levels: Optional[int] = None,
                  ratio: float = DEFAULT_RATIO, k: int = DEFAULT_K) -> Pyramid:
    """Coarsen repeatedly until ``n <= target_n``, the level cap, or no progress."""
    levels, pools = [g], []
    cur = g
    while cur.n > target_n and (max_levels is None or len(pools) < max_levels):
        coarse, pool = coarsen_once(cur, ratio, k)
        if pool.is_identity:
            break
        levels.append(coarse)
        pools.append(pool)
        cur = coarse
    return Pyramid(levels, pools)


def align_pyramid(p: Pyramid, depth: int) -> Pyramid:
    """Crop to ``depth`` pooling steps or pad with identity maps on the coarsest graph."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if p.depth == depth:
        return p
    if p.depth > depth:
        return Pyramid(p.levels[: depth + 1], p.pools[:depth])
    last = p.levels[-1]
    pad = depth - p.depth
    return Pyramid(p.levels + [last] * pad, p.pools + [PoolingMap.identity(last.n)] * pad)


def permute_pyramid(p: Pyramid, perm) -> Pyramid:
    """Apply a node permutation to the finest level, keeping coarse levels fixed.

    A pyramid whose first pool is the identity is identity all the way down,
    so every level gets permuted in that case.
    """
    perm = np.asarray(perm, dtype=np.int64)
    if not p.pools or p.pools[0].is_identity:
        return Pyramid([lv.permute(perm) for lv in p.levels], list(p.pools))
    first = p.pools[0]
    group = np.empty_like(first.group)
    group[perm] = first.group
    levels = [p.levels[0].permute(perm)] + p.levels[1:]
    return Pyramid(levels, [PoolingMap(first.fine_n, first.coarse_n, group)] + p.pools[1:])


def pyramid_for(g: AttributedGraph, depth: int, ratio: float = DEFAULT_RATIO, k: int = DEFAULT_K,
                target_n: int = 1) -> Pyramid:
    """Pyramid built to at most ``depth`` levels and aligned to exactly ``depth``."""
    return align_pyramid(build_pyramid(g, target_n=target_n, max_levels=depth, ratio=ratio, k=k), depth)


def build_pyramids(graphs, depth: int, ratio: float = DEFAULT_RATIO, k: int = DEFAULT_K,
                   workers: int = 1) -> list:
    """Aligned pyramids for a whole dataset; graphs are independent so this parallelizes."""
    if workers <= 1 or len(graphs) < 2:
        return [pyramid_for(g, depth, ratio, k) for g in graphs]
    from concurrent.futures import ProcessPoolExecutor
    from functools import partial

    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(partial(pyramid_for, depth=depth, ratio=ratio, k=k), graphs, chunksize=16))
