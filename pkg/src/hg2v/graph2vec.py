"""Ablation baseline: lookup-table graph/label embeddings over WL labels of every pyramid level.

Level-0 labels come from discrete node labels (or degree when the features
are continuous). A coarse node is labeled by hashing the multiset of its
members' labels, WL refinement then runs separately on each level, and all
resulting labels form the vocabulary of the graph. Graph vectors and label
vectors are trained jointly with the logistic negative-sampling objective.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ndiff as nd
from .coarsen import build_pyramids
from .graphcore import degree_features
from .wl import WlDictionary, initial_labels, wl_iterate

log = logging.getLogger(__name__)


@dataclass
class G2VParams:
    d: int = 64
    wl_depth: int = 2
    levels: int = 3
    epochs: int = 30
    batch_graphs: int = 32
    negatives: int = 5
    min_df: int = 2  # labels seen in fewer graphs are dropped from the vocabulary
    lr0: float = 0.05
    seed: int = 0


def base_labels(g) -> np.ndarray:
    """Discrete starting labels; continuous attributes are dropped in favor of degree."""
    try:
        return initial_labels(g)
    except ValueError:
        return np.round(degree_features(g)[:, 0]).astype(np.int64)


def pyramid_documents(pyramids, wl_depth: int, dictionary: WlDictionary = None) -> list:
    """One label list per graph: WL labels of all levels, coarse levels seeded by pooled multisets."""
    wd = dictionary or WlDictionary()
    docs = []
    for p in pyramids:
        words = []
        start = base_labels(p.levels[0])
        for lvl, g in enumerate(p.levels):
            if lvl > 0:
                pool = p.pools[lvl - 1]
                if pool.is_identity:
                    break
                members = [[] for _ in range(pool.coarse_n)]
                for u, c in enumerate(pool.group.tolist()):
                    members[c].append(int(prev[u]))
                start = np.array([wd.get(("pool", lvl, tuple(sorted(m)))) for m in members], dtype=np.int64)
            col = wl_iterate(g, wl_depth, wd, start=start)
            for lab in col.labels:
                words.extend(lab.tolist())
            prev = col.labels[0]
        docs.append(np.asarray(words, dtype=np.int64))
    return docs, len(wd)


def train_lookup_embeddings(docs, vocab: int, params: G2VParams) -> np.ndarray:
    """Graph vectors maximizing the JSD objective between graphs and their words.

    Positive pairs are the distinct (graph, word) pairs weighted by their
    multiplicity; each is matched with ``negatives`` words drawn from the
    unigram^0.75 distribution.
    """
    rng = np.random.default_rng(params.seed)
    n = len(docs)
    bags = [np.unique(doc, return_counts=True) for doc in docs]
    df = np.bincount(np.concatenate([b[0] for b in bags]), minlength=vocab)
    keep = df >= params.min_df
    remap = np.cumsum(keep) - 1
    vocab = int(keep.sum())
    if vocab == 0:
        raise ValueError("no label reaches min_df; lower it")
    bags = [(remap[w[keep[w]]], c[keep[w]]) for w, c in bags]
    counts = np.zeros(vocab)
    for w, c in bags:
        counts[w] += c
    noise = counts ** 0.75
    noise /= noise.sum()
    scale = 0.5 / params.d
    tg = nd.Tensor(rng.uniform(-scale, scale, (n, params.d)), requires_grad=True)
    tx = nd.Tensor(rng.uniform(-scale, scale, (vocab, params.d)), requires_grad=True)
    state = nd.AdamState.for_params([tg, tx])
    n_batches = int(np.ceil(n / params.batch_graphs))
    total = max(1, params.epochs * n_batches)
    step = 0
    for _ in range(params.epochs):
        order = rng.permutation(n)
        for b in range(n_batches):
            ids = order[b * params.batch_graphs:(b + 1) * params.batch_graphs]
            gi = np.concatenate([np.full(bags[i][0].size, i) for i in ids])
            wi = np.concatenate([bags[i][0] for i in ids])
            mult = np.concatenate([bags[i][1] for i in ids]).astype(np.float64)
            ni = rng.choice(vocab, size=wi.size * params.negatives, p=noise)
            gn = np.repeat(gi, params.negatives)
            tg.zero_grad()
            tx.zero_grad()
            with nd.Tape() as tape:
                pos = nd.rowwise_dot(nd.gather_rows(tg, gi), nd.gather_rows(tx, wi))
                neg = nd.rowwise_dot(nd.gather_rows(tg, gn), nd.gather_rows(tx, ni))
                loss = nd.neg(nd.sum_scalars([nd.weighted_mean(nd.log_sigmoid(pos), mult),
                                              nd.weighted_mean(nd.log_sigmoid(nd.neg(neg)),
                                                               np.repeat(mult, params.negatives))]))
            tape.backward(loss)
            nd.adam_step([tg, tx], [tg.grad, tx.grad], state, nd.lr_schedule(step, total, params.lr0))
            step += 1
    return tg.data.copy()


def graph2vec_loukas(graphs, params: G2VParams = G2VParams(), pyramids=None, ratio: float = 0.5,
                     k: int = 10, workers: int = 1) -> np.ndarray:
    """Transductive embeddings for all ``graphs`` (labels are never read)."""
    if pyramids is None:
        pyramids = build_pyramids(graphs, params.levels, ratio, k, workers=workers)
    docs, vocab = pyramid_documents(pyramids, params.wl_depth)
    log.info("baseline vocabulary: %d labels over %d graphs", vocab, len(docs))
    return train_lookup_embeddings(docs, vocab, params)


def baseline_embedder(graphs, pyramids=None, workers: int = 1):
    """Adapter for :func:`evaluation.evaluate_embedder`; the model is transductive so ``trainval_idx`` is unused."""
    cache = {}

    def embed(trainval_idx, params):
        key = tuple(sorted(vars(params).items()))
        if key not in cache:
            cache[key] = graph2vec_loukas(graphs, params, pyramids=pyramids, workers=workers)
        return cache[key]

    return embed
