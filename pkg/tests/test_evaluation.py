import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import approx_fprime

from hg2v.errors import ShapeError
from hg2v.evaluation import (
    CLASSIFIER_NOTE,
    EvalReport,
    _objective,
    evaluate,
    evaluate_embedder,
    fit_logistic,
    kfold_split,
    majority_rate,
    nearest_neighbors,
    shuffled_labels,
    stratified_split,
    train_classifier,
    transfer_eval,
)
from hg2v.trainer import HyperParams

from conftest import random_graph


class TestFolds:
    def test_sizes(self):
        folds = kfold_split(10, 5)
        assert [f.size for f in folds] == [2] * 5

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=20, max_size=80), st.integers(2, 5), st.integers(0, 99))
    def test_partition_and_stratification(self, labels, k, seed):
        y = np.array(labels)
        _, counts = np.unique(y, return_counts=True)
        if counts.min() < k:
            return
        folds = kfold_split(y, k, seed)
        allidx = np.concatenate(folds)
        np.testing.assert_array_equal(np.sort(allidx), np.arange(y.size))
        sizes = [f.size for f in folds]
        assert max(sizes) - min(sizes) <= 1
        for c in np.unique(y):
            share = np.array([np.sum(y[f] == c) for f in folds])
            assert share.max() - share.min() <= 1

    def test_small_class_falls_back(self):
        with pytest.warns(RuntimeWarning):
            folds = kfold_split([0] * 8 + [1] * 2, 5)
        assert sum(f.size for f in folds) == 10

    def test_split(self):
        y = np.array([0] * 50 + [1] * 30)
        tv, te = stratified_split(y, 0.2, seed=3)
        assert te.size == 16 and np.intersect1d(tv, te).size == 0
        assert np.sum(y[te] == 0) == 10 and np.sum(y[te] == 1) == 6


def blobs(n=60, d=4, classes=3, sep=6.0, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % classes
    X = rng.normal(size=(n, d)) + sep * np.eye(classes, d)[y]
    return X, y


class TestClassifier:
    def test_objective_gradient(self, rng):
        Z = rng.normal(size=(12, 3))
        Y = np.eye(3)[rng.integers(0, 3, 12)]
        w = rng.normal(size=12)
        g = _objective(w, Z, Y, 0.3)[1]
        fd = approx_fprime(w, lambda p: _objective(p, Z, Y, 0.3)[0], 1e-7)
        np.testing.assert_allclose(g, fd, atol=1e-6)

    def test_separable(self):
        X, y = blobs()
        clf = fit_logistic(X, y, 1e-4)
        assert clf.accuracy(X, y) == 1.0

    def test_gradient_at_optimum(self):
        X, y = blobs(sep=1.0)
        for lam in (1e-4, 1e-2, 1.0):
            assert fit_logistic(X, y, lam).grad_norm < 1e-6

    def test_strong_regularization_majority(self):
        X, y = blobs(n=50, classes=2, sep=1.0)
        y[:10] = 0  # class 0 is now the majority
        clf = fit_logistic(X, y, 1e8)
        assert np.abs(clf.weights).max() < 1e-6
        assert np.all(clf.predict(X) == 0)

    def test_standardization_uses_training_stats(self):
        X, y = blobs()
        clf = fit_logistic(X * 100 + 5, y, 1e-3)
        np.testing.assert_allclose(clf.mean, (X * 100 + 5).mean(axis=0))

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            fit_logistic(np.ones((4, 2)), np.zeros(4), 1.0)
        with pytest.raises(ShapeError):
            fit_logistic(np.ones((4, 2)), np.array([0, 1, 0]), 1.0)

    def test_lambda_selection(self):
        X, y = blobs(sep=2.0)
        clf, lam, scores = train_classifier(X, y)
        assert set(scores) == {1e-4, 1e-3, 1e-2, 1e-1, 1.0}
        assert scores[lam] == max(scores.values()) and clf.lam == lam


class TestProtocol:
    def test_never_embeds_with_test_labels(self):
        y = np.array([0, 1] * 20)
        seen = []

        def embed(tv, cfg):
            seen.append(tv.copy())
            return np.random.default_rng(0).normal(size=(y.size, 3)) + y[:, None]

        rep = evaluate_embedder(embed, y, [None], runs=3, seed=4)
        for run, tv in enumerate(seen):
            _, te = stratified_split(y, 0.2, 4 + 7919 * run)
            assert np.intersect1d(tv, te).size == 0
        assert len(rep.accuracies) == 3 and rep.note == CLASSIFIER_NOTE

    def test_report_std(self):
        rep = EvalReport("x", {}, [0.5, 0.7])
        assert np.isfinite(rep.std) and rep.std >= 0
        np.testing.assert_allclose(rep.std, np.std([0.5, 0.7], ddof=1))
        assert rep.to_dict()["mean"] == pytest.approx(0.6)

    def test_toy_end_to_end(self):
        graphs = [random_graph(6 + (i % 3), p=0.15 + 0.6 * (i % 2), seed=i, label=i % 2) for i in range(30)]
        rep = evaluate(graphs, [HyperParams(d=4, L=2, epochs=3)], runs=2, dataset="toy")
        assert len(rep.accuracies) == 2 and all(0 <= a <= 1 for a in rep.accuracies)

    def test_label_shuffle_control(self, mutag):
        graphs, _ = mutag
        y = shuffled_labels([g.label for g in graphs], seed=1)
        rep = evaluate(graphs, [HyperParams(d=16, a=2, L=3)], runs=3, labels=y)
        p = majority_rate(y)
        sigma = np.sqrt(p * (1 - p) / 38)  # binomial std of one 38-graph test split
        assert abs(rep.mean - p) < 3 * sigma


class TestTransfer:
    def test_feature_mismatch(self):
        with pytest.raises(ShapeError):
            transfer_eval([random_graph(5, f=2)], [random_graph(5, f=3, label=0)], HyperParams(L=1))

    def test_unlabeled_training_set(self):
        a = [random_graph(7, seed=i) for i in range(6)]
        b = [random_graph(7, seed=10 + i, label=i % 2) for i in range(20)]
        rep = transfer_eval(a, b, HyperParams(d=3, L=2, epochs=2), runs=2)
        assert len(rep.accuracies) == 2 and rep.to_dict()["mean"] == rep.mean


class TestNeighbors:
    def test_duplicate_first(self):
        E = np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 0.0], [1.0, 0.0]])
        nn = nearest_neighbors(E, [0], k=2)[0]
        assert nn == [(2, 0.0), (3, 1.0)]

    def test_full_ranking_sorted(self, rng):
        E = rng.normal(size=(9, 3))
        nn = nearest_neighbors(E, [4], k=8)[0]
        assert sorted(i for i, _ in nn) == [0, 1, 2, 3, 5, 6, 7, 8]
        d = [x for _, x in nn]
        assert d == sorted(d)

    def test_ties_by_id(self):
        E = np.array([[0.0], [1.0], [-1.0], [1.0]])
        nn = nearest_neighbors(E, ["q"], k=3, ids=np.array(["q", "c", "b", "a"]))[0]
        assert [i for i, _ in nn] == ["a", "b", "c"]

    def test_bad_k_and_query(self):
        with pytest.raises(ValueError):
            nearest_neighbors(np.zeros((3, 2)), [0], k=3)
        with pytest.raises(KeyError):
            nearest_neighbors(np.zeros((3, 2)), [7], k=1)
