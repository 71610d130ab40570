"""Weisfeiler-Lehman relabeling, label histograms and the edge-removal sensitivity study."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .graphcore import AttributedGraph, degree_features


class WlDictionary:
    """Injective, insertion-ordered map from WL keys to integer label ids.

    Keys are ``("init", value)`` for starting labels and
    ``(own_label, sorted_neighbor_labels)`` afterwards. Sharing one
    dictionary between graphs makes their label ids comparable.
    """

    def __init__(self):
        self._ids = {}

    def __len__(self):
        return len(self._ids)

    def __contains__(self, key):
        return key in self._ids

    def get(self, key) -> int:
        ids = self._ids
        lid = ids.get(key)
        if lid is None:
            lid = ids[key] = len(ids)
        return lid

    def keys(self):
        return list(self._ids)


@dataclass
class WlColoring:
    labels: list  # labels[l] -> int array of length n

    @property
    def depth(self) -> int:
        return len(self.labels) - 1

    def histogram(self, level: int) -> Counter:
        if not 0 <= level <= self.depth:
            raise IndexError(f"level {level} outside 0..{self.depth}")
        return Counter(self.labels[level].tolist())

    def num_distinct(self, level: int) -> int:
        return int(np.unique(self.labels[level]).size)


def initial_labels(g: AttributedGraph) -> np.ndarray:
    """Integer starting labels from a discrete feature representation.

    Accepted inputs: a single integer-valued column (degree, constant or a
    label id) or a one-hot block (argmax). Continuous attributes raise.
    """
    x = g.features
    if x.shape[1] == 1:
        col = x[:, 0]
        if not np.allclose(col, np.round(col)):
            raise ValueError("WL needs discrete node labels; got continuous features "
                             "(discretize them or use the GNN model)")
        return np.round(col).astype(np.int64)
    is01 = np.all((x == 0) | (x == 1), axis=1)
    if np.all(is01) and np.all(x.sum(axis=1) == 1):
        return np.argmax(x, axis=1).astype(np.int64)
    raise ValueError("WL needs discrete node labels; got continuous features "
                     "(discretize them or use the GNN model)")


def wl_iterate(g: AttributedGraph, depth: int, dictionary: WlDictionary, start=None) -> WlColoring:
    """Run ``depth`` WL refinements; level 0 is the (hashed) starting labeling."""
    raw = initial_labels(g) if start is None else np.asarray(start)
    cur = np.fromiter((dictionary.get(("init", v)) for v in raw.tolist()), dtype=np.int64, count=g.n)
    levels = [cur]
    nbrs = g.neighbors
    for _ in range(depth):
        prev = cur
        lab = prev.tolist()
        cur = np.fromiter(
            (dictionary.get((lab[u], tuple(sorted(prev[nb].tolist())))) for u, nb in enumerate(nbrs)),
            dtype=np.int64, count=g.n)
        levels.append(cur)
    return WlColoring(levels)


def similarity_score(c1: WlColoring, c2: WlColoring, level: int) -> float:
    """100 * |h1 & h2| / |h1 | h2| on multiset label histograms."""
    h1, h2 = c1.histogram(level), c2.histogram(level)
    inter = sum((h1 & h2).values())
    union = sum((h1 | h2).values())
    if union == 0:
        return 100.0
    return 100.0 * inter / union


def edge_removal_experiment(kind: str, n_graphs: int = 100, n_nodes: int = 500,
                            removals=range(1, 11), depths=range(1, 6), seed: int = 0) -> dict:
    """Mean WL similarity between graphs and copies with ``k`` edges removed.

    Returns ``{(removed, depth): mean_similarity}`` including the ``removed=0``
    control row. Starting labels are uniform. For each graph instance one
    random edge order is drawn and the first ``k`` edges are removed, so the
    perturbed copies are nested across ``k``.
    """
    from .synth import gen_topology, removal_order

    removals = list(removals)
    depths = list(depths)
    max_depth = max(depths)
    sums = {(k, d): 0.0 for k in [0] + removals for d in depths}
    rng = np.random.default_rng(seed)
    for gi in range(n_graphs):
        g = gen_topology(kind, n_nodes, seed=int(rng.integers(2**32)))
        g = g.with_features(np.zeros((g.n, 1)))
        order = removal_order(g, int(rng.integers(2**32)))
        wd = WlDictionary()
        base = wl_iterate(g, max_depth, wd)
        for d in depths:
            sums[(0, d)] += similarity_score(base, base, d)
        for k in removals:
            col = wl_iterate(g.remove_edges(order[:k]), max_depth, wd)
            for d in depths:
                sums[(k, d)] += similarity_score(base, col, d)
    return {key: val / n_graphs for key, val in sums.items()}


def degree_labeled(g: AttributedGraph) -> AttributedGraph:
    return g.with_features(degree_features(g))
