import numpy as np
import pytest

from hg2v.coarsen import PoolingMap, Pyramid, build_pyramids
from hg2v.graph2vec import G2VParams, base_labels, baseline_embedder, graph2vec_loukas, pyramid_documents
from hg2v.graphcore import AttributedGraph
from hg2v.synth import gen_topology

from conftest import random_graph


def path_pyramid():
    g = AttributedGraph.from_edges(4, [[0, 1], [1, 2], [2, 3]], np.zeros((4, 1)))
    coarse = AttributedGraph.from_edges(2, [[0, 1]], np.zeros((2, 1)))
    return Pyramid([g, coarse], [PoolingMap(4, 2, [0, 0, 1, 1])])


class TestDocuments:
    def test_continuous_features_use_degree(self):
        g = AttributedGraph.from_edges(3, [[0, 1], [1, 2]], np.random.default_rng(0).normal(size=(3, 2)))
        np.testing.assert_array_equal(base_labels(g), [1, 2, 1])

    def test_word_count(self):
        docs, vocab = pyramid_documents([path_pyramid()], wl_depth=1)
        # 4 fine nodes x 2 WL levels + 2 coarse nodes x 2 WL levels
        assert docs[0].size == 12
        # pooled multiset keys also take dictionary ids, so vocab bounds the word ids
        assert docs[0].max() < vocab

    def test_pooled_labels_symmetric(self):
        docs, _ = pyramid_documents([path_pyramid()], wl_depth=0)
        coarse = docs[0][4:]
        assert coarse[0] == coarse[1]

    def test_identity_levels_skipped(self):
        g = AttributedGraph.from_edges(3, [], np.zeros((3, 1)))
        pyr = Pyramid([g, g], [PoolingMap.identity(3)])
        docs, _ = pyramid_documents([pyr], wl_depth=1)
        assert docs[0].size == 6

    def test_shared_vocabulary(self):
        pyrs = build_pyramids([gen_topology("cycle", 12), gen_topology("cycle", 12, seed=1)], 2)
        docs, _ = pyramid_documents(pyrs, wl_depth=2)
        assert sorted(docs[0].tolist()) == sorted(docs[1].tolist())


class TestTraining:
    def test_shape_and_determinism(self):
        graphs = [random_graph(10, seed=i) for i in range(6)]
        p = G2VParams(d=8, epochs=3, min_df=1)
        a = graph2vec_loukas(graphs, p)
        b = graph2vec_loukas(graphs, p)
        assert a.shape == (6, 8)
        np.testing.assert_array_equal(a, b)

    def test_min_df_too_high(self):
        with pytest.raises(ValueError):
            graph2vec_loukas([random_graph(5, seed=0)], G2VParams(d=2, epochs=1, min_df=2, wl_depth=3))

    def test_separates_topologies(self):
        graphs = [gen_topology("cycle", 30, seed=i) for i in range(10)] + \
                 [gen_topology("wheel", 30, seed=i) for i in range(10)]
        emb = graph2vec_loukas(graphs, G2VParams(d=16, epochs=30, min_df=1))
        c0, c1 = emb[:10].mean(axis=0), emb[10:].mean(axis=0)
        within = max(np.linalg.norm(emb[:10] - c0, axis=1).max(), np.linalg.norm(emb[10:] - c1, axis=1).max())
        assert np.linalg.norm(c0 - c1) > within

    def test_embedder_caches(self):
        graphs = [random_graph(8, seed=i) for i in range(4)]
        embed = baseline_embedder(graphs)
        p = G2VParams(d=4, epochs=1, min_df=1)
        assert embed(np.arange(2), p) is embed(np.arange(3), p)
