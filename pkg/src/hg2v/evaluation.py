"""Downstream evaluation: stratified splits, logistic-regression probe, protocol runs, transfer and k-NN."""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import ShapeError

log = logging.getLogger(__name__)

LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
CLASSIFIER_NOTE = ("classifier: L2-regularized multinomial logistic regression "
                   "(substitutes the RBF C-SVM of the original protocol)")


# --- splits -----------------------------------------------------------------

def kfold_split(labels, k: int = 5, seed: int = 0) -> list:
    """Stratified ``k``-fold partition of ``range(len(labels))``.

    ``labels`` may also be an int (item count), giving unstratified folds.
    Members of each class are shuffled and dealt round-robin with a pointer
    that carries over between classes, so fold sizes differ by at most one and
    every class is split as evenly as possible.
    """
    if isinstance(labels, (int, np.integer)):
        labels, stratify = np.zeros(int(labels), dtype=np.int64), False
    else:
        labels, stratify = np.asarray(labels), True
    n = labels.size
    if k < 2 or n < k:
        raise ValueError(f"need 2 <= k <= n_items, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(labels, return_counts=True)
    if stratify and counts.min() < k:
        warnings.warn(f"a class has fewer than {k} members; folds are not stratified",
                      RuntimeWarning, stacklevel=2)
        stratify = False
    if not stratify:
        return [np.sort(f) for f in np.array_split(rng.permutation(n), k)]
    folds = [[] for _ in range(k)]
    ptr = 0
    for c in classes:
        members = rng.permutation(np.flatnonzero(labels == c))
        for idx in members:
            folds[ptr].append(idx)
            ptr = (ptr + 1) % k
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]


def stratified_split(labels, test_frac: float = 0.2, seed: int = 0):
    """``(trainval_idx, test_idx)`` with per-class test shares as close as possible to ``test_frac``."""
    labels = np.asarray(labels)
    if not 0.0 < test_frac < 1.0:
        raise ValueError("test_frac must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    members = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
    want = np.array([m.size * test_frac for m in members])
    take = np.floor(want).astype(int)
    short = int(round(labels.size * test_frac)) - int(take.sum())
    for i in np.argsort(-(want - take), kind="stable")[:max(short, 0)]:
        take[i] += 1
    test = np.concatenate([m[:t] for m, t in zip(members, take)])
    trainval = np.concatenate([m[t:] for m, t in zip(members, take)])
    return np.sort(trainval), np.sort(test)


# --- classifier -------------------------------------------------------------

@dataclass
class LogisticClassifier:
    weights: np.ndarray  # D x C
    bias: np.ndarray  # C
    mean: np.ndarray
    scale: np.ndarray
    classes: np.ndarray
    lam: float
    grad_norm: float = math.nan
    iterations: int = 0

    def _z(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def decision(self, X) -> np.ndarray:
        return self._z(X) @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.decision(X), axis=1)]

    def accuracy(self, X, y) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y)))


def _objective(params, Z, Y, lam):
    n, D = Z.shape
    C = Y.shape[1]
    W = params[:D * C].reshape(D, C)
    b = params[D * C:]
    logits = Z @ W + b
    lse = logsumexp(logits, axis=1)
    loss = np.mean(lse - np.sum(logits * Y, axis=1)) + lam * np.sum(W * W)
    P = np.exp(logits - lse[:, None])
    R = (P - Y) / n
    gW = Z.T @ R + 2.0 * lam * W
    gb = R.sum(axis=0)
    return loss, np.concatenate([gW.ravel(), gb])


def fit_logistic(X, y, lam: float, max_iter: int = 5000, tol: float = 1e-6) -> LogisticClassifier:
    """Minimize mean cross-entropy + ``lam * ||W||^2`` (bias unpenalized) on z-scored inputs."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("classifier needs at least two classes")
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ShapeError(f"embeddings {X.shape} vs labels {y.shape}")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Z = (X - mean) / scale
    Y = (y[:, None] == classes[None, :]).astype(np.float64)
    D, C = Z.shape[1], classes.size
    res = minimize(_objective, np.zeros(D * C + C), args=(Z, Y, lam), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": tol * 1e-2, "ftol": 1e-16, "maxcor": 20})
    grad = _objective(res.x, Z, Y, lam)[1]
    return LogisticClassifier(res.x[:D * C].reshape(D, C), res.x[D * C:], mean, scale, classes, lam,
                              float(np.linalg.norm(grad)), int(res.nit))


def cv_score(X, y, lam: float, folds: Sequence[np.ndarray]) -> float:
    accs = []
    idx = np.arange(len(y))
    for f in folds:
        tr = np.setdiff1d(idx, f)
        if np.unique(y[tr]).size < 2:
            continue
        accs.append(fit_logistic(X[tr], y[tr], lam).accuracy(X[f], y[f]))
    return float(np.mean(accs)) if accs else 0.0


def train_classifier(X, y, lambdas=LAMBDA_GRID, inner_folds: int = 5, seed: int = 0):
    """Select ``lam`` by inner stratified CV, then refit on all of ``X``.

    Returns ``(classifier, best_lambda, {lam: cv_accuracy})``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if np.unique(y).size < 2:
        raise ValueError("classifier needs at least two classes")
    lambdas = list(lambdas)
    if len(lambdas) == 1:
        return fit_logistic(X, y, lambdas[0]), lambdas[0], {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        folds = kfold_split(y, min(inner_folds, len(y)), seed)
    scores = {lam: cv_score(X, y, lam, folds) for lam in lambdas}
    best = max(lambdas, key=lambda lam: (scores[lam], lam))
    return fit_logistic(X, y, best), best, scores


# --- protocol ---------------------------------------------------------------

@dataclass
class EvalReport:
    dataset: str
    hyper: dict
    accuracies: list = field(default_factory=list)
    runtime: float = 0.0
    selected: list = field(default_factory=list)
    note: str = CLASSIFIER_NOTE

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else math.nan

    @property
    def std(self) -> float:
        if len(self.accuracies) < 2:
            return 0.0
        return float(np.std(self.accuracies, ddof=1))

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(mean=self.mean, std=self.std, runs=len(self.accuracies))
        return out

    def summary(self) -> str:
        return f"{self.dataset}: {100 * self.mean:.1f} +- {100 * self.std:.1f} over {len(self.accuracies)} runs"


EmbedFn = Callable[[np.ndarray, object], np.ndarray]


def evaluate_embedder(embed_fn: EmbedFn, labels, configs: Sequence, runs: int = 10, test_frac: float = 0.2,
                      lambdas=LAMBDA_GRID, inner_folds: int = 5, seed: int = 0, dataset: str = "",
                      hyper: Optional[dict] = None) -> EvalReport:
    """Generic split/select/test loop.

    ``embed_fn(trainval_idx, config)`` must return embeddings for every item,
    computed from a model fitted (without labels) on ``trainval_idx`` only.
    The config and ``lam`` with the best inner-CV accuracy are used for the
    test score of each run.
    """
    labels = np.asarray(labels)
    report = EvalReport(dataset, hyper or {})
    t0 = time.perf_counter()
    for run in range(runs):
        rs = seed + 7919 * run
        tv, te = stratified_split(labels, test_frac, rs)
        assert np.intersect1d(tv, te).size == 0, "train/test overlap"
        best = None
        for ci, cfg in enumerate(configs):
            emb = embed_fn(tv, cfg)
            clf, lam, scores = train_classifier(emb[tv], labels[tv], lambdas, inner_folds, rs)
            score = scores.get(lam, 1.0)
            if best is None or score > best[0]:
                best = (score, ci, lam, clf, emb)
        _, ci, lam, clf, emb = best
        acc = clf.accuracy(emb[te], labels[te])
        report.accuracies.append(acc)
        report.selected.append({"config": _describe(configs[ci]), "lambda": lam})
        log.info("run %d: test accuracy %.4f (config %s, lambda %g)", run, acc, _describe(configs[ci]), lam)
    report.runtime = time.perf_counter() - t0
    return report


def _describe(cfg):
    if hasattr(cfg, "__dataclass_fields__"):
        return {k: v for k, v in asdict(cfg).items() if k in ("d", "a", "L")} or asdict(cfg)
    return cfg


class PyramidCache:
    """Pyramids keyed by (depth, ratio, k), built once per dataset."""

    def __init__(self, graphs, workers: int = 1, pyramids=None):
        self.graphs = graphs
        self.workers = workers
        self._store = {}
        self._given = pyramids

    def get(self, hyper, mode: str = "full"):
        from .trainer import prepare_pyramids

        key = (mode, hyper.L, hyper.ratio, hyper.k)
        if key not in self._store:
            given = self._given if mode == "full" else None
            self._store[key] = prepare_pyramids(self.graphs, hyper, mode, pyramids=given, workers=self.workers)
        return self._store[key]


def hg2v_embedder(graphs, mode: str = "full", cache: Optional[PyramidCache] = None, workers: int = 1,
                  pyramids=None) -> EmbedFn:
    from .trainer import embed_dataset, train

    cache = cache or PyramidCache(graphs, workers, pyramids)

    def embed(trainval_idx, hyper):
        pyrs = cache.get(hyper, mode)
        model, _ = train([graphs[i] for i in trainval_idx], hyper, mode="full",
                         pyramids=[pyrs[i] for i in trainval_idx])
        return embed_dataset(model, pyrs)

    return embed


def graph_labels(graphs) -> np.ndarray:
    if any(g.label is None for g in graphs):
        raise ValueError("every graph needs a label for evaluation")
    return np.array([g.label for g in graphs], dtype=np.int64)


def evaluate(graphs, hyper_grid, runs: int = 10, mode: str = "full", dataset: str = "", seed: int = 0,
             lambdas=LAMBDA_GRID, test_frac: float = 0.2, inner_folds: int = 5, workers: int = 1,
             labels=None, pyramids=None) -> EvalReport:
    """Full protocol: per run, unsupervised training on TrainVal, inner-CV selection, Test accuracy."""
    hyper_grid = list(hyper_grid)
    y = graph_labels(graphs) if labels is None else np.asarray(labels)
    embed = hg2v_embedder(graphs, mode, workers=workers, pyramids=pyramids)
    report = evaluate_embedder(embed, y, hyper_grid, runs, test_frac, lambdas, inner_folds, seed, dataset,
                               {"grid": [_describe(h) for h in hyper_grid], "mode": mode})
    log.info("%s", report.summary())
    return report


def shuffled_labels(labels, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).permutation(np.asarray(labels))


def majority_rate(labels) -> float:
    _, counts = np.unique(np.asarray(labels), return_counts=True)
    return float(counts.max() / counts.sum())


@dataclass
class TransferReport:
    train_dataset: str
    infer_dataset: str
    hyper: dict
    accuracies: list
    runtime: float
    note: str = CLASSIFIER_NOTE

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mean"] = self.mean
        return out


def transfer_eval(train_graphs, infer_graphs, hyper, runs: int = 10, seed: int = 0, lambdas=LAMBDA_GRID,
                  test_frac: float = 0.2, inner_folds: int = 5, train_name: str = "A", infer_name: str = "B",
                  workers: int = 1) -> TransferReport:
    """Train on ``train_graphs`` without labels, embed ``infer_graphs``, classify within the latter."""
    from .trainer import embed_dataset, prepare_pyramids, train

    fa, fb = train_graphs[0].feature_dim, infer_graphs[0].feature_dim
    if fa != fb:
        raise ShapeError(f"feature dimension {fa} of the training set differs from {fb} of the inference set")
    t0 = time.perf_counter()
    unlabeled = [g.with_label(None) for g in train_graphs]
    model, _ = train(unlabeled, hyper, workers=workers)
    emb = embed_dataset(model, prepare_pyramids(infer_graphs, hyper, workers=workers))
    y = graph_labels(infer_graphs)
    accs = []
    for run in range(runs):
        rs = seed + 7919 * run
        tv, te = stratified_split(y, test_frac, rs)
        clf, _, _ = train_classifier(emb[tv], y[tv], lambdas, inner_folds, rs)
        accs.append(clf.accuracy(emb[te], y[te]))
    return TransferReport(train_name, infer_name, _describe(hyper), accs, time.perf_counter() - t0)


def nearest_neighbors(embeddings, query_ids, k: int = 6, ids=None) -> list:
    """Euclidean ``k`` nearest neighbors of each query (excluding itself), ties broken by id.

    Returns one list of ``(id, distance)`` per query, distances non-decreasing.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    n = E.shape[0]
    ids = np.arange(n) if ids is None else np.asarray(ids)
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in 1..{n - 1}")
    pos = {v: i for i, v in enumerate(ids.tolist())}
    out = []
    for q in query_ids:
        if q not in pos:
            raise KeyError(f"unknown graph id {q!r}")
        qi = pos[q]
        dist = np.sqrt(np.sum((E - E[qi]) ** 2, axis=1))
        order = [i for i in np.lexsort((ids, dist)) if i != qi][:k]
        out.append([(ids[i].item(), float(dist[i])) for i in order])
    return out


def with_hyper(hyper, **changes):
    return replace(hyper, **changes)
