"""Finite-difference cases for every ndiff primitive, on random 5x4 inputs."""
import numpy as np
import scipy.sparse as sp

from hg2v import ndiff as nd


def _proj(t, w):
    """Scalarize ``t`` with a fixed random weighting so every output entry matters."""
    return nd.mean_all(nd.rowwise_dot(t, nd.Tensor(w)))


def primitive_cases(seed=0):
    rng = np.random.default_rng(seed)

    def p(*shape, low=-1.0, high=1.0):
        return nd.Tensor(rng.uniform(low, high, shape), requires_grad=True)

    def w(*shape):
        return rng.normal(size=shape)

    a, b, c = p(5, 4), p(4, 3), p(5, 4)
    row = p(1, 4)
    pos = p(5, 4, low=0.2, high=2.0)
    sparse_left = sp.random(6, 5, density=0.5, random_state=seed, format="csr")
    group = np.array([0, 2, 1, 2, 0])
    idx = np.array([4, 0, 0, 3, 1, 4])
    mask = rng.random((5, 4)) < 0.5
    mask[0, 0] = True
    weights = rng.random((5, 1)) + 0.1
    col = p(5, 1)
    w54, w53, w64, w34, w14, w45, w51 = w(5, 4), w(5, 3), w(6, 4), w(3, 4), w(1, 4), w(4, 5), w(5, 1)
    return [
        ("matmul", lambda: _proj(nd.matmul(a, b), w53), [a, b]),
        ("matmul_sparse", lambda: _proj(nd.matmul(sparse_left, a), w64), [a]),
        ("add", lambda: _proj(nd.add(a, c), w54), [a, c]),
        ("add_row_broadcast", lambda: _proj(nd.add(a, row), w54), [a, row]),
        ("concat_cols", lambda: _proj(nd.concat_cols([a, c]), np.hstack([w54, w54[::-1]])), [a, c]),
        ("transpose", lambda: _proj(nd.transpose(a), w45), [a]),
        ("tanh", lambda: _proj(nd.tanh(a), w54), [a]),
        ("sigmoid", lambda: _proj(nd.sigmoid(a), w54), [a]),
        ("log", lambda: _proj(nd.log(pos), w54), [pos]),
        ("log_sigmoid", lambda: _proj(nd.log_sigmoid(a), w54), [a]),
        ("neg", lambda: _proj(nd.neg(a), w54), [a]),
        ("scalar_scale", lambda: _proj(nd.scalar_scale(a, -2.5), w54), [a]),
        ("group_sum_rows", lambda: _proj(nd.group_sum_rows(a, group, 3), w34), [a]),
        ("gather_rows", lambda: _proj(nd.gather_rows(a, idx), w64), [a]),
        ("colwise_sum", lambda: _proj(nd.colwise_sum(a), w14), [a]),
        ("colwise_max", lambda: _proj(nd.colwise_max(a), w14), [a]),
        ("rowwise_dot", lambda: _proj(nd.rowwise_dot(a, c), w51), [a, c]),
        ("mean_all", lambda: nd.mean_all(nd.tanh(a)), [a]),
        ("weighted_mean", lambda: nd.weighted_mean(col, weights), [col]),
        ("masked_mean", lambda: nd.masked_mean(nd.tanh(a), mask), [a]),
        ("sum_scalars", lambda: nd.sum_scalars([nd.mean_all(a), nd.mean_all(nd.tanh(c))]), [a, c]),
    ]
