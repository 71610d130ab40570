"""Test-side oracles: permutation-restricted fused Gromov-Wasserstein bound, continuity probe, exact small OT."""
from __future__ import annotations

import itertools
from collections import deque

import numpy as np

from .graphcore import AttributedGraph

MAX_PERM_NODES = 8
MAX_OT_ATOMS = 6


def _dense(g: AttributedGraph) -> np.ndarray:
    return g.adjacency.toarray()


def fgw_objective(g1: AttributedGraph, g2: AttributedGraph, perm) -> float:
    """Fused GW objective of the coupling putting mass ``1/n`` on each ``(u, perm[u])``.

    Sums ``|A1(u,u') - A2(v,v')| + |Z1(u) - Z2(v)| + |Z1(u') - Z2(v')|`` over
    matched quadruples with weight ``1/n^2``; feature gaps use the L1 norm.
    """
    perm = np.asarray(perm)
    n = g1.n
    a1, a2 = _dense(g1), _dense(g2)[np.ix_(perm, perm)]
    z = np.abs(g1.features - g2.features[perm]).sum(axis=1)
    total = np.abs(a1 - a2).sum() + 2.0 * n * z.sum()
    return float(total / n ** 2)


def dg_permutation_bound(g1: AttributedGraph, g2: AttributedGraph) -> float:
    """Minimum of the fused GW objective over all ``n!`` permutation couplings."""
    n = g1.n
    if g2.n != n:
        raise ValueError("permutation couplings need graphs of equal size")
    if n > MAX_PERM_NODES:
        raise ValueError(f"at most {MAX_PERM_NODES} nodes supported, got {n}")
    if g1.feature_dim != g2.feature_dim:
        raise ValueError("feature dimensions differ")
    a1, a2 = _dense(g1), _dense(g2)
    zgap = np.abs(g1.features[:, None, :] - g2.features[None, :, :]).sum(axis=2)  # n x n
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    rows = np.arange(n)
    best = np.inf
    for chunk in np.array_split(perms, max(1, len(perms) // 4096)):
        a2p = a2[chunk[:, :, None], chunk[:, None, :]]
        struct_term = np.abs(a1[None] - a2p).sum(axis=(1, 2))
        feat_term = 2.0 * n * zgap[rows[None, :], chunk].sum(axis=1)
        best = min(best, float(np.min(struct_term + feat_term)))
    return best / n ** 2


def continuity_probe(model, g: AttributedGraph, eps_list, draws: int = 20, seed: int = 0, pyramid=None) -> dict:
    """Mean max-norm change of all node outputs when features get uniform noise of size ``eps``.

    The pyramid depends only on the topology, so it is built once and shared
    by every perturbed copy.
    """
    from .coarsen import pyramid_for
    from .trainer import node_outputs

    hyper = model.hyper
    pyr = pyramid if pyramid is not None else pyramid_for(g, hyper.L, hyper.ratio, hyper.k)
    base = np.concatenate([o.ravel() for o in node_outputs(model, pyr)])
    rng = np.random.default_rng(seed)
    out = {}
    for eps in eps_list:
        devs = []
        for _ in range(draws):
            z = g.features + rng.uniform(-eps, eps, size=g.features.shape)
            cur = np.concatenate([o.ravel() for o in node_outputs(model, pyr, z)])
            devs.append(float(np.max(np.abs(cur - base))))
        out[eps] = float(np.mean(devs))
    return out


def ot_lp_bruteforce(weights1, weights2, costs) -> float:
    """Exact transportation cost by the primal transportation simplex.

    Starts from the north-west-corner basis and pivots on the first cell (in
    row-major order) with negative reduced cost; ties for the leaving cell go
    to the smallest index, which rules out cycling on degenerate bases.
    """
    a = np.asarray(weights1, dtype=np.float64).ravel().copy()
    b = np.asarray(weights2, dtype=np.float64).ravel().copy()
    c = np.asarray(costs, dtype=np.float64)
    n, m = a.size, b.size
    if n > MAX_OT_ATOMS or m > MAX_OT_ATOMS:
        raise ValueError(f"at most {MAX_OT_ATOMS} atoms per side")
    if c.shape != (n, m):
        raise ValueError(f"cost matrix must be {n}x{m}")
    if np.any(a < 0) or np.any(b < 0) or not np.isclose(a.sum(), b.sum(), rtol=1e-12, atol=1e-15):
        raise ValueError("weights must be nonnegative with equal totals")
    x = np.zeros((n, m))
    basis = set()
    i = j = 0
    ra, rb = a.copy(), b.copy()
    while True:
        t = min(ra[i], rb[j])
        x[i, j] = t
        basis.add((i, j))
        ra[i] -= t
        rb[j] -= t
        if i == n - 1 and j == m - 1:
            break
        if (ra[i] <= rb[j] and i < n - 1) or j == m - 1:
            i += 1
        else:
            j += 1
    tol = 1e-12 * max(1.0, np.abs(c).max())
    for _ in range(10000):
        u, v = _potentials(basis, c, n, m)
        red = c - u[:, None] - v[None, :]
        enter = None
        for ci in range(n):
            for cj in range(m):
                if (ci, cj) not in basis and red[ci, cj] < -tol:
                    enter = (ci, cj)
                    break
            if enter:
                break
        if enter is None:
            return float(np.sum(c * x))
        cycle = _cycle(basis, enter, n)
        minus = cycle[1::2]
        theta = min(x[e] for e in minus)
        leave = min(e for e in minus if x[e] <= theta)
        for k, e in enumerate(cycle):
            x[e] += theta if k % 2 == 0 else -theta
        x[leave] = 0.0
        basis.remove(leave)
        basis.add(enter)
    raise RuntimeError("transportation simplex did not terminate")


def _potentials(basis, c, n, m):
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    u[0] = 0.0
    adj_r = {i: [] for i in range(n)}
    adj_c = {j: [] for j in range(m)}
    for i, j in basis:
        adj_r[i].append(j)
        adj_c[j].append(i)
    queue = deque([("r", 0)])
    while queue:
        side, k = queue.popleft()
        if side == "r":
            for j in adj_r[k]:
                if np.isnan(v[j]):
                    v[j] = c[k, j] - u[k]
                    queue.append(("c", j))
        else:
            for i in adj_c[k]:
                if np.isnan(u[i]):
                    u[i] = c[i, k] - v[k]
                    queue.append(("r", i))
    return u, v


def _cycle(basis, enter, n):
    """Cells of the pivot cycle, starting with ``enter`` and alternating +/-."""
    ei, ej = enter
    # nodes: rows 0..n-1, columns n..; path through the basis tree from column ej to row ei
    adj = {}
    for i, j in basis:
        adj.setdefault(i, []).append(n + j)
        adj.setdefault(n + j, []).append(i)
    start, goal = n + ej, ei
    parent = {start: None}
    queue = deque([start])
    while queue:
        k = queue.popleft()
        if k == goal:
            break
        for nb in adj.get(k, []):
            if nb not in parent:
                parent[nb] = k
                queue.append(nb)
    cells = [enter]
    k = goal
    path = []
    while parent[k] is not None:
        p = parent[k]
        path.append((k, p))
        k = p
    # path runs row ei -> ... -> column ej; walk it from ej back towards ei
    for a_, b_ in reversed(path):
        r, col = (a_, b_ - n) if a_ < n else (b_, a_ - n)
        cells.append((r, col))
    return cells


def ot_uniform(atoms1, atoms2) -> float:
    """W1 between uniform measures on two atom sets via :func:`ot_lp_bruteforce`."""
    x = np.asarray(atoms1, dtype=np.float64).ravel()
    y = np.asarray(atoms2, dtype=np.float64).ravel()
    return ot_lp_bruteforce(np.full(x.size, 1.0 / x.size), np.full(y.size, 1.0 / y.size),
                            np.abs(x[:, None] - y[None, :]))
