"""Laplacian spectra, 1-D Wasserstein distance and the coarsening/distance correlation study."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .coarsen import DENSE_EIGEN_CAP, Pyramid
from .errors import NumericalError
from .graphcore import AttributedGraph, laplacian

log = logging.getLogger(__name__)

UNDEFINED = None  # sentinel for a correlation with zero variance on either side


@dataclass(frozen=True, eq=False)
class Spectrum:
    values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=np.float64).ravel())
        if v.size == 0:
            raise ValueError("empty spectrum")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


def spectrum(g: AttributedGraph) -> Spectrum:
    """All eigenvalues of D - A, ascending, tiny negatives clamped to 0."""
    if g.n > DENSE_EIGEN_CAP:
        raise NumericalError(f"full spectrum limited to {DENSE_EIGEN_CAP} nodes, got {g.n}")
    try:
        vals = scipy.linalg.eigvalsh(laplacian(g).toarray())
    except np.linalg.LinAlgError as exc:
        raise NumericalError(str(exc)) from exc
    if vals[0] < -1e-9:
        raise NumericalError(f"Laplacian eigenvalue {vals[0]} is significantly negative")
    return Spectrum(np.maximum(vals, 0.0))


def wasserstein_1d(s1, s2) -> float:
    """W1 distance between the uniform measures on two sets of reals.

    Integrates ``|F1^-1(t) - F2^-1(t)|`` over [0, 1] where both quantile
    functions are piecewise constant with breakpoints at ``i/n`` and ``j/m``.
    """
    a = np.sort(np.asarray(getattr(s1, "values", s1), dtype=np.float64).ravel())
    b = np.sort(np.asarray(getattr(s2, "values", s2), dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("both spectra must be nonempty")
    n, m = a.size, b.size
    # breakpoints on a common integer grid of n*m steps avoids rounding at shared knots
    knots = np.union1d(np.arange(n + 1) * m, np.arange(m + 1) * n)
    left = knots[:-1]
    widths = np.diff(knots) / (n * m)
    qa = a[left // m]
    qb = b[left // n]
    return float(np.sum(widths * np.abs(qa - qb)))


def pearson(x, y):
    """Pearson correlation, or ``UNDEFINED`` when either side has no variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(np.dot(xc, xc)), math.sqrt(np.dot(yc, yc))
    if sx <= 1e-15 * max(1.0, np.abs(x).max()) or sy <= 1e-15 * max(1.0, np.abs(y).max()):
        return UNDEFINED
    return float(np.dot(xc, yc) / (sx * sy))


@dataclass
class CorrelationResult:
    levels: list
    per_run: dict  # level -> list of per-run correlations (None when undefined)
    mean: dict  # level -> mean over defined runs, or None
    points: list = field(default_factory=list)  # (run, pair_idx, i, j, d_level0, d_level1, ...)

    def rows(self):
        header = ["run", "pair", "g", "h", "d0"] + [f"d{lv}" for lv in self.levels]
        return header, self.points


def _sample_pairs(rng, n_items: int, pairs: int):
    total = n_items * (n_items - 1) // 2
    if pairs > total:
        log.warning("requested %d pairs but only %d distinct pairs exist; sampling with replacement",
                    pairs, total)
        i = rng.integers(0, n_items, size=pairs)
        j = (i + rng.integers(1, n_items, size=pairs)) % n_items
        return np.stack([np.minimum(i, j), np.maximum(i, j)], axis=1)
    chosen = rng.choice(total, size=pairs, replace=False)
    # unrank pair index -> (i, j) with i < j
    iu = np.triu_indices(n_items, k=1)
    return np.stack([iu[0][chosen], iu[1][chosen]], axis=1)


def spectra_correlation_experiment(pyramids, pairs: int = 1000, runs: int = 10,
                                   levels=(1, 2), seed: int = 0) -> CorrelationResult:
    """Correlate spectral distances of graph couples before and after coarsening.

    ``pyramids`` must have depth at least ``max(levels)``. For every run,
    ``pairs`` couples are drawn uniformly; for each level the Pearson
    correlation between ``d_W(g0, h0)`` and ``d_W(gl, hl)`` is computed and
    then averaged over runs.
    """
    levels = list(levels)
    need = max(levels)
    for p in pyramids:
        if p.depth < need:
            raise ValueError(f"pyramids must have depth >= {need}")
    if len(pyramids) < 2:
        raise ValueError("need at least two graphs")
    spectra = [[spectrum(p.levels[lv]) for lv in [0] + levels] for p in pyramids]
    rng = np.random.default_rng(seed)
    per_run = {lv: [] for lv in levels}
    points = []
    for run in range(runs):
        idx = _sample_pairs(rng, len(pyramids), pairs)
        dists = np.array([[wasserstein_1d(spectra[i][k], spectra[j][k]) for k in range(len(levels) + 1)]
                          for i, j in idx])
        for k, lv in enumerate(levels, start=1):
            per_run[lv].append(pearson(dists[:, 0], dists[:, k]))
        for p_i, ((i, j), row) in enumerate(zip(idx, dists)):
            points.append([run, p_i, int(i), int(j)] + row.tolist())
    mean = {}
    for lv, vals in per_run.items():
        defined = [v for v in vals if v is not UNDEFINED]
        mean[lv] = float(np.mean(defined)) if defined else UNDEFINED
    return CorrelationResult(levels, per_run, mean, points)


def pyramid_spectra(p: Pyramid) -> list:
    return [spectrum(g) for g in p.levels]
