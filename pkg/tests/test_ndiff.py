import numpy as np
import pytest

from hg2v import ndiff as nd
from hg2v.errors import NumericalError, ShapeError

from gradcases import primitive_cases

CASES = primitive_cases()


class TestGradients:
    @pytest.mark.parametrize("name,f,params", CASES, ids=[c[0] for c in CASES])
    def test_finite_differences(self, name, f, params):
        assert nd.gradcheck(f, params) < 1e-6

    def test_every_primitive_covered(self):
        names = {c[0].replace("_sparse", "").replace("_row_broadcast", "") for c in CASES}
        prims = {"matmul", "add", "concat_cols", "transpose", "tanh", "sigmoid", "log", "log_sigmoid",
                 "neg", "scalar_scale", "group_sum_rows", "gather_rows", "colwise_sum", "colwise_max",
                 "rowwise_dot", "mean_all", "weighted_mean", "masked_mean", "sum_scalars"}
        assert prims <= names

    def test_tanh_at_zero(self):
        x = nd.Tensor(np.zeros((1, 1)), requires_grad=True)
        with nd.Tape() as tape:
            y = nd.tanh(x)
        tape.backward(y)
        assert x.grad[0, 0] == 1.0

    def test_identity_pooling(self):
        x = nd.Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
        g = np.random.default_rng(0).normal(size=(3, 2))
        with nd.Tape() as tape:
            y = nd.group_sum_rows(x, np.arange(3), 3)
            loss = nd.mean_all(nd.rowwise_dot(y, nd.Tensor(g)))
        np.testing.assert_array_equal(y.data, x.data)
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, g / 3)

    def test_gradient_accumulates_over_reuse(self):
        x = nd.Tensor([[2.0]], requires_grad=True)
        with nd.Tape() as tape:
            loss = nd.sum_scalars([x, x, nd.scalar_scale(x, 3.0)])
        tape.backward(loss)
        assert x.grad[0, 0] == 5.0

    def test_no_tape_no_record(self):
        x = nd.Tensor([[1.0]], requires_grad=True)
        y = nd.tanh(x)
        assert not y.requires_grad


class TestErrors:
    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nd.matmul(np.ones((2, 3)), np.ones((2, 3)))
        with pytest.raises(ShapeError):
            nd.add(np.ones((2, 3)), np.ones((2, 2)))
        with pytest.raises(ShapeError):
            nd.Tensor(np.ones((2, 2, 2)))

    def test_non_finite(self):
        with pytest.raises(NumericalError), np.errstate(over="ignore"):
            nd.matmul(np.array([[1e308]]), np.array([[1e308]]))
        with pytest.raises(NumericalError):
            nd.log(np.array([[0.0]]))

    def test_backward_needs_scalar(self):
        x = nd.Tensor(np.ones((2, 2)), requires_grad=True)
        with nd.Tape() as tape:
            y = nd.tanh(x)
        with pytest.raises(ShapeError):
            tape.backward(y)

    def test_log_sigmoid_stable(self):
        y = nd.log_sigmoid(np.array([[-800.0, 800.0]]))
        np.testing.assert_allclose(y.data, [[-800.0, 0.0]])


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = nd.Tensor([[1.0, -2.0]], requires_grad=True)
        st = nd.AdamState.for_params([p])
        nd.adam_step([p], [np.zeros((1, 2))], st, 0.1)
        np.testing.assert_array_equal(p.data, [[1.0, -2.0]])

    def test_first_step(self):
        p = nd.Tensor([[0.0]], requires_grad=True)
        st = nd.AdamState.for_params([p])
        nd.adam_step([p], [np.ones((1, 1))], st, 1e-3)
        # bias-corrected: m_hat = 1, v_hat = 1
        np.testing.assert_allclose(p.data[0, 0], -1e-3 / (1 + 1e-8), rtol=1e-12)

    def test_quadratic_converges(self):
        p = nd.Tensor([[1.0]], requires_grad=True)
        st = nd.AdamState.for_params([p])
        for _ in range(100):
            nd.adam_step([p], [2 * p.data], st, 0.01)
        assert abs(p.data[0, 0]) < 0.5

    def test_misaligned(self):
        p = nd.Tensor([[0.0]], requires_grad=True)
        with pytest.raises(ShapeError):
            nd.adam_step([p], [np.ones((1, 2))], nd.AdamState.for_params([p]), 0.1)


class TestLrSchedule:
    def test_endpoints(self):
        assert nd.lr_schedule(0, 100, 1e-3) == 1e-3
        np.testing.assert_allclose(nd.lr_schedule(100, 100, 1e-3), 1e-6, atol=1e-12)

    def test_geometric_midpoint(self):
        np.testing.assert_allclose(nd.lr_schedule(50, 100, 1.0), 1 / np.sqrt(1000), rtol=1e-12)

    def test_monotone(self):
        lrs = [nd.lr_schedule(s, 40, 0.1) for s in range(41)]
        assert all(b < a for a, b in zip(lrs, lrs[1:]))
