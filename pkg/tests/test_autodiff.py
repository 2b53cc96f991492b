"""Gradient checks for the autodiff engine against central finite differences."""

import numpy as np
import pytest

from maskmatch.autodiff import (
    Tensor,
    clamped_log,
    gather_tokens,
    gelu,
    scatter_tokens,
    softmax,
)


def numeric_grad(f, x, h=1e-6):
    """Central finite differences of a scalar function f at x (float64)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return g


def check_grad(build, shape, seed=0, rtol=1e-6, atol=1e-8):
    """Compare tape gradients of build(Tensor) -> scalar against finite differences."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    t = Tensor(x.copy(), requires_grad=True)
    loss = build(t)
    loss.backward()
    num = numeric_grad(lambda arr: float(build(Tensor(arr)).data), x)
    np.testing.assert_allclose(t.grad, num, rtol=rtol, atol=atol)


class TestElementwise:
    def test_add_mul_scalar(self):
        check_grad(lambda t: ((t * 3.0 + 1.5) * t).sum(), (4, 3))

    def test_tensor_tensor_broadcast(self):
        rng = np.random.default_rng(1)
        b = Tensor(rng.standard_normal((1, 3)), requires_grad=True)

        def build(t):
            return (t * b + b).mean()

        rng2 = np.random.default_rng(2)
        x = rng2.standard_normal((5, 3))
        t = Tensor(x.copy(), requires_grad=True)
        loss = build(t)
        loss.backward()
        num_t = numeric_grad(lambda arr: float((Tensor(arr) * Tensor(b.data) + Tensor(b.data)).mean().data), x)
        np.testing.assert_allclose(t.grad, num_t, rtol=1e-6, atol=1e-9)
        num_b = numeric_grad(lambda arr: float((Tensor(x) * Tensor(arr) + Tensor(arr)).mean().data), b.data.copy())
        np.testing.assert_allclose(b.grad, num_b, rtol=1e-6, atol=1e-9)

    def test_pow(self):
        check_grad(lambda t: ((t * t + 1.0) ** -0.5).sum(), (6,))

    def test_div(self):
        rng = np.random.default_rng(3)
        d = Tensor(rng.uniform(0.5, 2.0, (4,)))
        check_grad(lambda t: (t / d).sum() + (t / 2.0).sum(), (4,))

    def test_sub_neg(self):
        check_grad(lambda t: (1.0 - t - t * 0.5).sum(), (3, 2))


class TestMatmulShaping:
    def test_matmul_2d(self):
        rng = np.random.default_rng(4)
        w = Tensor(rng.standard_normal((3, 5)))
        check_grad(lambda t: ((t @ w) ** 2.0).sum(), (4, 3))

    def test_matmul_weight_grad_batched(self):
        # weight shared across a stacked batch: unbroadcast must sum over batch
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 4, 3))
        w0 = rng.standard_normal((3, 3))
        w = Tensor(w0.copy(), requires_grad=True)
        loss = ((Tensor(x) @ w) ** 2.0).sum()
        loss.backward()
        num = numeric_grad(lambda arr: float(((Tensor(x) @ Tensor(arr)) ** 2.0).sum().data), w0)
        np.testing.assert_allclose(w.grad, num, rtol=1e-6, atol=1e-8)

    def test_batched_matmul_both_sides(self):
        rng = np.random.default_rng(6)
        b = Tensor(rng.standard_normal((2, 3, 5, 4)))
        check_grad(lambda t: ((t @ b) * 0.25).sum(), (2, 3, 2, 5))

    def test_reshape_transpose(self):
        check_grad(lambda t: (t.reshape(2, 6).transpose(1, 0) ** 2.0).mean(), (2, 3, 2))

    def test_reductions(self):
        check_grad(lambda t: t.mean(axis=1).sum(), (3, 4))
        check_grad(lambda t: t.sum(axis=(0, 2), keepdims=True).mean(), (2, 3, 4))


class TestFusedOps:
    def test_linear_grads_all_three(self):
        from maskmatch.autodiff import linear
        rng = np.random.default_rng(20)
        x0 = rng.standard_normal((2, 4, 3))
        w0 = rng.standard_normal((3, 5))
        b0 = rng.standard_normal(5)

        def loss(x, w, b):
            return (linear(Tensor(x) if not isinstance(x, Tensor) else x,
                           Tensor(w) if not isinstance(w, Tensor) else w,
                           Tensor(b) if not isinstance(b, Tensor) else b) ** 2.0).sum()

        xt = Tensor(x0.copy(), requires_grad=True)
        wt = Tensor(w0.copy(), requires_grad=True)
        bt = Tensor(b0.copy(), requires_grad=True)
        loss(xt, wt, bt).backward()
        np.testing.assert_allclose(
            xt.grad, numeric_grad(lambda a: float(loss(a, w0, b0).data), x0),
            rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(
            wt.grad, numeric_grad(lambda a: float(loss(x0, a, b0).data), w0),
            rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(
            bt.grad, numeric_grad(lambda a: float(loss(x0, b=a, w=w0).data), b0),
            rtol=1e-6, atol=1e-8)

    def test_layer_norm_grads_all_three(self):
        from maskmatch.autodiff import layer_norm
        rng = np.random.default_rng(21)
        x0 = rng.standard_normal((3, 4, 6))
        g0 = rng.standard_normal(6)
        b0 = rng.standard_normal(6)

        def loss(x, g, b):
            return (layer_norm(Tensor(x) if not isinstance(x, Tensor) else x,
                               Tensor(g) if not isinstance(g, Tensor) else g,
                               Tensor(b) if not isinstance(b, Tensor) else b)
                    ** 2.0).sum()

        xt = Tensor(x0.copy(), requires_grad=True)
        gt = Tensor(g0.copy(), requires_grad=True)
        bt = Tensor(b0.copy(), requires_grad=True)
        loss(xt, gt, bt).backward()
        np.testing.assert_allclose(
            xt.grad, numeric_grad(lambda a: float(loss(a, g0, b0).data), x0),
            rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(
            gt.grad, numeric_grad(lambda a: float(loss(x0, a, b0).data), g0),
            rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(
            bt.grad, numeric_grad(lambda a: float(loss(x0, g0, a).data), b0),
            rtol=1e-6, atol=1e-8)

    def test_layer_norm_normalizes(self):
        from maskmatch.autodiff import layer_norm
        rng = np.random.default_rng(22)
        x = Tensor(rng.standard_normal((5, 8)) * 3.0 + 2.0)
        out = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.std(axis=-1), 1.0, atol=1e-5)


class TestNonlinearities:
    def test_softmax_grad(self):
        check_grad(lambda t: (softmax(t, axis=-1) ** 2.0).sum(), (3, 5))

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        y = softmax(Tensor(rng.standard_normal((10, 6)) * 20.0))
        np.testing.assert_allclose(y.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_gelu_grad(self):
        check_grad(lambda t: gelu(t).sum(), (50,))

    def test_clamped_log_grad_above_floor(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(0.1, 1.0, (20,))
        t = Tensor(x.copy(), requires_grad=True)
        clamped_log(t, 1e-12).sum().backward()
        np.testing.assert_allclose(t.grad, 1.0 / x, rtol=1e-12)

    def test_clamped_log_zero_grad_below_floor(self):
        t = Tensor(np.array([0.0, 1e-15, 0.5]), requires_grad=True)
        clamped_log(t, 1e-12).sum().backward()
        assert t.grad[0] == 0.0 and t.grad[1] == 0.0 and t.grad[2] == 2.0


class TestGatherScatter:
    def test_gather_forward(self):
        x = np.arange(24, dtype=float).reshape(2, 4, 3)
        idx = np.array([[0, 2], [3, 1]])
        out = gather_tokens(Tensor(x), idx)
        np.testing.assert_array_equal(out.data[0], x[0, [0, 2]])
        np.testing.assert_array_equal(out.data[1], x[1, [3, 1]])

    def test_gather_grad(self):
        idx = np.array([[0, 2], [3, 1]])
        check_grad(lambda t: (gather_tokens(t, idx) ** 2.0).sum(), (2, 4, 3))

    def test_scatter_forward_and_grad(self):
        idx = np.array([[1, 3], [0, 2]])
        x = np.random.default_rng(9).standard_normal((2, 2, 3))
        out = scatter_tokens(Tensor(x), idx, 4)
        assert out.data.shape == (2, 4, 3)
        np.testing.assert_array_equal(out.data[0, 1], x[0, 0])
        np.testing.assert_array_equal(out.data[0, 0], 0.0)
        check_grad(lambda t: (scatter_tokens(t, idx, 4) ** 2.0).sum(), (2, 2, 3))

    def test_gather_scatter_roundtrip(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((3, 5, 2))
        idx = np.stack([rng.permutation(5) for _ in range(3)])
        out = scatter_tokens(gather_tokens(Tensor(x), idx), idx, 5)
        np.testing.assert_array_equal(out.data, x)


class TestGraphMechanics:
    def test_grad_accumulates_over_reuse(self):
        t = Tensor(np.array([2.0]), requires_grad=True)
        (t * t + t * 3.0).sum().backward()
        np.testing.assert_allclose(t.grad, [7.0])

    def test_no_grad_graph_is_pruned(self):
        t = Tensor(np.ones(3))
        out = (t * 2.0 + 1.0).sum()
        assert out._parents == () and out._backward is None

    def test_backward_requires_scalar(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (t * 2.0).backward()

    def test_float32_graph_stays_float32(self):
        t = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
        out = softmax(gelu(t * 2.0 + 1.0)).mean()
        assert out.data.dtype == np.float32
        out.backward()
        assert t.grad.dtype == np.float32
