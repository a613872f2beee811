import math

import numpy as np
import pytest
from helpers import check_gradients, finite_difference, rel_error

from ames import autodiff as ad
from ames.autodiff import BatchNormState, Parameter, Tape
from ames.errors import (
    ContractError,
    DegenerateBatchError,
    DimensionError,
    DivergenceError,
    DomainError,
    UnknownNodeError,
)


class TestMatmul:
    def test_identity(self):
        t = Tape()
        out = ad.matmul(t.constant(np.eye(2)), t.constant([[1, 2], [3, 4]]))
        np.testing.assert_array_equal(out.value, [[1, 2], [3, 4]])

    def test_projector(self):
        t = Tape()
        out = ad.matmul(t.constant([[1, 0], [0, 0]]), t.constant([[5], [7]]))
        np.testing.assert_array_equal(out.value, [[5], [0]])

    def test_shape_mismatch(self):
        t = Tape()
        with pytest.raises(DimensionError):
            ad.matmul(t.constant(np.ones((2, 3))), t.constant(np.ones((2, 3))))

    def test_gradient(self, rng):
        a, b, w = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
        err = check_gradients(lambda t, n: ad.sum_all(ad.mul(ad.matmul(n[0], n[1]), w)), [a, b])
        assert err < 1e-6


class TestElementwise:
    def test_sigmoid_zero(self):
        assert Tape().constant([[0.0]]).tape is not None
        t = Tape()
        assert ad.sigmoid(t.constant([[0.0]])).value[0, 0] == 0.5

    def test_sigmoid_extremes_do_not_overflow(self):
        t = Tape()
        out = ad.sigmoid(t.constant([[-1000.0, 1000.0]])).value
        np.testing.assert_array_equal(out, [[0.0, 1.0]])

    def test_elu_negative_one(self):
        t = Tape()
        assert ad.elu(t.constant([[-1.0]])).value[0, 0] == pytest.approx(math.exp(-1) - 1, abs=1e-12)
        assert ad.elu(t.constant([[-1.0]])).value[0, 0] == pytest.approx(-0.632120, abs=1e-6)

    def test_elu_kink_uses_right_derivative(self):
        t = Tape()
        x = t.constant([[0.0]])
        t.backward(ad.sum_all(ad.elu(x)))
        assert t.grad(x)[0, 0] == 1.0

    def test_log_exp_roundtrip(self, rng):
        x = rng.normal(size=(4, 3))
        t = Tape()
        xn = t.constant(x)
        y = ad.log(ad.exp(xn))
        np.testing.assert_allclose(y.value, x, atol=1e-12)
        t.backward(ad.sum_all(y))
        np.testing.assert_allclose(t.grad(xn), 1.0, atol=1e-12)
        assert check_gradients(lambda t, n: ad.sum_all(ad.log(ad.exp(n[0]))), [x]) < 1e-6

    def test_log_domain_error(self):
        t = Tape()
        with pytest.raises(DomainError):
            ad.log(t.constant([[1.0, 0.0]]))

    def test_shape_mismatch(self):
        t = Tape()
        with pytest.raises(DimensionError):
            ad.add(t.constant(np.ones((2, 3))), t.constant(np.ones((3, 2))))

    @pytest.mark.parametrize("kind", ["exp", "neg", "sigmoid", "elu", "square", "softplus"])
    def test_unary_gradients(self, kind, rng):
        for _ in range(20):
            x = rng.normal(size=(3, 4))
            x[np.abs(x) < 1e-3] = 0.5  # keep away from the elu kink
            w = rng.normal(size=(3, 4))
            err = check_gradients(lambda t, n: ad.sum_all(ad.mul(ad.elementwise(n[0], kind), w)), [x])
            assert err < 1e-4, kind

    def test_log_sqrt_gradients(self, rng):
        for _ in range(20):
            x = rng.uniform(0.2, 3.0, size=(3, 3))
            w = rng.normal(size=(3, 3))
            assert check_gradients(lambda t, n: ad.sum_all(ad.mul(ad.log(n[0]), w)), [x]) < 1e-4
            assert check_gradients(lambda t, n: ad.sum_all(ad.mul(ad.sqrt(n[0]), w)), [x]) < 1e-4

    @pytest.mark.parametrize("kind", ["add", "sub", "mul"])
    def test_binary_gradients_with_broadcast(self, kind, rng):
        for shape_b in [(3, 4), (1, 4), (3, 1), (1, 1)]:
            a, b = rng.normal(size=(3, 4)), rng.normal(size=shape_b)
            w = rng.normal(size=(3, 4))
            err = check_gradients(lambda t, n: ad.sum_all(ad.mul(ad.elementwise(n[0], kind, n[1]), w)), [a, b])
            assert err < 1e-6

    def test_scale(self, rng):
        x = rng.normal(size=(2, 2))
        t = Tape()
        np.testing.assert_array_equal(ad.elementwise(t.constant(x), "scale", 3.0).value, 3.0 * x)

    def test_clamped_inverse_trig(self, rng):
        x = rng.uniform(1.1, 4.0, size=(3, 3))
        assert check_gradients(lambda t, n: ad.sum_all(ad.arccosh_clamped(n[0])), [x]) < 1e-4
        y = rng.uniform(-0.9, 0.9, size=(3, 3))
        assert check_gradients(lambda t, n: ad.sum_all(ad.arccos_clamped(n[0])), [y]) < 1e-4

    def test_clamp_region_has_zero_gradient(self):
        t = Tape()
        x = t.constant([[0.5, 1.0, 2.0]])
        t.backward(ad.sum_all(ad.arccosh_clamped(x)))
        np.testing.assert_array_equal(t.grad(x), [[0.0, 0.0, 1.0 / math.sqrt(3.0)]])
        t = Tape()
        y = t.constant([[-2.0, 1.0, 1.5]])
        out = ad.arccos_clamped(y)
        np.testing.assert_allclose(out.value, [[math.pi, 0.0, 0.0]])
        t.backward(ad.sum_all(out))
        np.testing.assert_array_equal(t.grad(y), 0.0)


class TestReduce:
    def test_sum(self):
        t = Tape()
        assert ad.reduce(t.constant([[1, 2], [3, 4]]), "sum").value[0, 0] == 10

    def test_mean_of_constant(self):
        t = Tape()
        assert ad.reduce(t.constant(np.full((3, 5), 2.5)), "mean").value[0, 0] == 2.5

    def test_rowsum_and_rowmax(self):
        t = Tape()
        x = t.constant([[1, 5, 2], [7, 0, 7]])
        np.testing.assert_array_equal(ad.reduce(x, "rowsum").value, [[8], [14]])
        np.testing.assert_array_equal(ad.reduce(x, "rowmax").value, [[5], [7]])

    def test_rowmax_ties_route_to_lowest_index(self):
        t = Tape()
        x = t.constant([[7.0, 1.0, 7.0]])
        t.backward(ad.sum_all(ad.rowmax(x)))
        np.testing.assert_array_equal(t.grad(x), [[1.0, 0.0, 0.0]])

    def test_rowmax_gradient(self, rng):
        for _ in range(20):
            # distinct entries: no ties
            x = rng.permutation(20).reshape(4, 5) + rng.uniform(0, 0.1, size=(4, 5))
            w = rng.normal(size=(4, 1))
            assert check_gradients(lambda t, n: ad.sum_all(ad.mul(ad.rowmax(n[0]), w)), [x]) < 1e-6

    @pytest.mark.parametrize("kind", ["sum", "mean", "rowsum", "colsum"])
    def test_gradients(self, kind, rng):
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=ad.reduce(Tape().constant(x), kind).shape)
        assert check_gradients(lambda t, n: ad.sum_all(ad.mul(ad.reduce(n[0], kind), w)), [x]) < 1e-6

    def test_unknown_kind(self):
        with pytest.raises(ContractError):
            ad.reduce(Tape().constant([[1.0]]), "median")


class TestSoftmax:
    def test_uniform_row(self):
        out = ad.softmax_rows(Tape().constant([[0.0, 0.0, 0.0]])).value
        np.testing.assert_allclose(out, 1 / 3, atol=1e-15)

    def test_stabilised(self):
        out = ad.softmax_rows(Tape().constant([[1000.0, 0.0]])).value
        assert abs(out[0, 0] - 1.0) < 1e-12 and abs(out[0, 1]) < 1e-12
        assert np.isfinite(out).all()

    def test_rows_sum_to_one(self, rng):
        for _ in range(20):
            out = ad.softmax_rows(Tape().constant(rng.normal(scale=5, size=(4, 5)))).value
            np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
            assert (out >= 0).all() and (out <= 1).all()

    def test_gradient(self, rng):
        for _ in range(20):
            x, w = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
            assert check_gradients(lambda t, n: ad.sum_all(ad.mul(ad.softmax_rows(n[0]), w)), [x]) < 1e-4
            assert check_gradients(lambda t, n: ad.sum_all(ad.mul(ad.log_softmax_rows(n[0]), w)), [x]) < 1e-4


class TestBatchnorm:
    def test_constant_column(self):
        t = Tape()
        x = np.column_stack([np.full(5, 3.0), np.arange(5.0)])
        out = ad.batchnorm(t.constant(x), np.ones((1, 2)), np.zeros((1, 2)), BatchNormState(2))
        np.testing.assert_array_equal(out.value[:, 0], 0.0)

    def test_normalises_columns(self, rng):
        x = rng.normal(loc=3, scale=4, size=(50, 3))
        out = ad.batchnorm(Tape().constant(x), np.ones((1, 3)), np.zeros((1, 3)), BatchNormState(3)).value
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-9)
        # biased variance of the normalised column is var / (var + eps)
        np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-6)

    def test_running_stats(self, rng):
        x = rng.normal(loc=2, size=(10, 2))
        state = BatchNormState(2)
        ad.batchnorm(Tape().constant(x), np.ones((1, 2)), np.zeros((1, 2)), state)
        np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=0, keepdims=True))
        np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1, keepdims=True))
        out = ad.batchnorm(Tape().constant(x), np.ones((1, 2)), np.zeros((1, 2)), state, mode="eval").value
        np.testing.assert_allclose(out, (x - state.running_mean) / np.sqrt(state.running_var + 1e-5))

    def test_single_row_train(self):
        with pytest.raises(DegenerateBatchError):
            ad.batchnorm(Tape().constant([[1.0, 2.0]]), np.ones((1, 2)), np.zeros((1, 2)), BatchNormState(2))

    @pytest.mark.parametrize("mode", ["train", "eval"])
    def test_gradient(self, mode, rng):
        for _ in range(20):
            x = rng.normal(size=(6, 3))
            gamma, beta = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
            w = rng.normal(size=(6, 3))
            state = BatchNormState(3)
            state.running_mean, state.running_var = rng.normal(size=(1, 3)), rng.uniform(0.5, 2, size=(1, 3))

            def build(t, n):
                return ad.sum_all(ad.mul(ad.batchnorm(n[0], n[1], n[2], state.copy(), mode), w))

            assert check_gradients(build, [x, gamma, beta]) < 1e-5


class TestBackward:
    def test_linear_map(self, rng):
        x = rng.normal(size=(3, 1))
        t = Tape()
        w = t.param(Parameter("w", rng.normal(size=(2, 3))))
        t.backward(ad.sum_all(ad.matmul(w, t.constant(x))))
        np.testing.assert_array_equal(t.grad(w), np.repeat(x.T, 2, axis=0))

    def test_unreachable_parameter(self):
        t = Tape()
        p = t.param(Parameter("p", [[1.0, 2.0]]))
        x = t.constant([[3.0]])
        t.backward(ad.sum_all(ad.square(x)))
        np.testing.assert_array_equal(t.grad(p), 0.0)

    def test_non_scalar_loss(self):
        t = Tape()
        with pytest.raises(ContractError):
            t.backward(t.constant(np.ones((2, 1))))

    def test_deterministic(self, rng):
        x = rng.normal(size=(5, 4))
        t = Tape()
        n = t.constant(x)
        loss = ad.sum_all(ad.softmax_rows(ad.matmul(ad.elu(n), ad.transpose(n))))
        t.backward(loss)
        first = t.grad(n).copy()
        t.backward(loss)
        assert np.array_equal(first, t.grad(n))

    def test_accumulation_is_additive(self, rng):
        x = rng.normal(size=(3, 3))
        t = Tape()
        n = t.constant(x)
        twice = ad.add(ad.sum_all(ad.square(n)), ad.sum_all(ad.square(n)))
        t.backward(twice)
        t2 = Tape()
        a, b = t2.constant(x), t2.constant(x)
        t2.backward(ad.add(ad.sum_all(ad.square(a)), ad.sum_all(ad.square(b))))
        np.testing.assert_array_equal(t.grad(n), t2.grad(a) + t2.grad(b))

    def test_interior_gradient_readable(self):
        t = Tape()
        x = t.constant([[1.0, 2.0]])
        h = ad.scale(x, 3.0)
        t.backward(ad.sum_all(ad.square(h)))
        np.testing.assert_array_equal(t.grad(h.id), [[6.0, 12.0]])

    def test_nan_is_reported_with_op(self):
        t = Tape()
        with pytest.raises(DivergenceError) as exc:
            ad.exp(t.constant([[1000.0]]))
        assert exc.value.op == "exp"


class TestOverride:
    def _loss(self, p):
        t = Tape()
        node = t.param(p)
        t.backward(ad.sum_all(ad.square(node)))
        return t, node

    def test_override_sets_exact_value(self):
        p = Parameter("p", [[1.0, -2.0]])
        t, node = self._loss(p)
        t.override_gradient(node.id, np.array([[0.25, 0.5]]))
        np.testing.assert_array_equal(t.param_grad(p), [[0.25, 0.5]])

    def test_override_with_zeros_leaves_parameter(self):
        from ames.trainer import Adam

        p = Parameter("p", [[1.0, -2.0]])
        t, node = self._loss(p)
        t.override_gradient(node.id, np.zeros((1, 2)))
        opt = Adam(lr=0.1)
        opt.step([p], [t.param_grad(p)])
        np.testing.assert_array_equal(p.value, [[1.0, -2.0]])
        np.testing.assert_array_equal(opt.m["p"], 0.0)

    def test_override_with_original_is_identity(self):
        from ames.trainer import Adam

        p1, p2 = Parameter("p", [[1.0, -2.0]]), Parameter("p", [[1.0, -2.0]])
        t1, n1 = self._loss(p1)
        t2, _ = self._loss(p2)
        t1.override_gradient(n1.id, t1.grad(n1).copy())
        o1, o2 = Adam(0.1), Adam(0.1)
        o1.step([p1], [t1.param_grad(p1)])
        o2.step([p2], [t2.param_grad(p2)])
        assert np.array_equal(p1.value, p2.value)

    def test_unknown_id(self):
        t = Tape()
        x = t.constant([[1.0]])
        with pytest.raises(UnknownNodeError):
            t.override_gradient(x.id, np.zeros((1, 1)))

    def test_shape_mismatch(self):
        p = Parameter("p", [[1.0, -2.0]])
        t, node = self._loss(p)
        with pytest.raises(DimensionError):
            t.override_gradient(node.id, np.zeros((2, 1)))


def test_finite_difference_helper_on_known_gradient():
    x = np.array([[1.0, 2.0]])
    g = finite_difference(lambda: float(np.sum(x**3)), x)
    assert rel_error(g, 3 * x**2) < 1e-8
