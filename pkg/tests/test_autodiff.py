import math

import numpy as np
import pytest

from latentworld import autodiff as ad
from latentworld.errors import ContractError, NumericError, ShapeError


def matmul_oracle(a, b):
    """Independent triple-loop scalar product."""
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += float(a[i, l]) * float(b[l, j])
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        b = ad.tensor(np.random.default_rng(0).standard_normal((2, 4)))
        out = ad.matmul(ad.tensor(np.eye(2)), b)
        np.testing.assert_array_equal(out.data, b.data)

    def test_zeros(self):
        b = ad.tensor(np.random.default_rng(1).standard_normal((3, 4)))
        out = ad.matmul(ad.tensor(np.zeros((2, 3))), b)
        np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((3, 3)).astype(np.float32)
        b = rng.standard_normal((3, 3)).astype(np.float32)
        out = ad.matmul(ad.tensor(a), ad.tensor(b))
        np.testing.assert_allclose(out.data, matmul_oracle(a, b), atol=1e-6)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError) as err:
            ad.matmul(ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros((4, 5))))
        assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)

    def test_backward_formulas(self):
        rng = np.random.default_rng(3)
        a = ad.tensor(rng.standard_normal((2, 3)), requires_grad=True)
        b = ad.tensor(rng.standard_normal((3, 4)), requires_grad=True)
        ad.backward(ad.sum_all(ad.matmul(a, b)))
        g = np.ones((2, 4), dtype=np.float32)
        np.testing.assert_allclose(a.grad, g @ b.data.T, atol=1e-6)
        np.testing.assert_allclose(b.grad, a.data.T @ g, atol=1e-6)


class TestAttention:
    def test_single_query_single_key(self):
        rng = np.random.default_rng(0)
        q = ad.tensor(rng.standard_normal((1, 1, 1, 4)))
        k = ad.tensor(rng.standard_normal((1, 1, 1, 4)))
        v = ad.tensor(rng.standard_normal((1, 1, 1, 4)))
        out = ad.attention(q, k, v, ad.tensor(np.zeros((1, 1))))
        np.testing.assert_array_equal(out.data, v.data)

    def test_masked_row_selects_single_position(self):
        rng = np.random.default_rng(1)
        q = ad.tensor(rng.standard_normal((1, 1, 1, 4)))
        k = ad.tensor(rng.standard_normal((1, 1, 5, 4)))
        v = ad.tensor(rng.standard_normal((1, 1, 5, 4)))
        j = 3
        mask = np.full((1, 5), ad.NEG_INF, dtype=np.float32)
        mask[0, j] = 0.0
        out = ad.attention(q, k, v, ad.tensor(mask))
        np.testing.assert_array_equal(out.data[0, 0, 0], v.data[0, 0, j])

    def test_explicit_enumeration_oracle(self):
        rng = np.random.default_rng(2)
        d = 6
        q = rng.standard_normal((2, d))
        k = rng.standard_normal((3, d))
        v = rng.standard_normal((3, d))
        out = ad.attention(ad.tensor(q[None, None]), ad.tensor(k[None, None]),
                           ad.tensor(v[None, None]), None)
        expected = np.zeros((2, d))
        for i in range(2):
            scores = np.array([float(q[i] @ k[j]) / math.sqrt(d) for j in range(3)])
            w = np.exp(scores - scores.max())
            w = w / w.sum()
            for j in range(3):
                expected[i] += w[j] * v[j]
        np.testing.assert_allclose(out.data[0, 0], expected, atol=1e-6)

    def test_nonfinite_input_raises(self):
        q = np.zeros((1, 1, 1, 4), dtype=np.float32)
        bad = q.copy()
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises(NumericError):
            ad.attention(ad.tensor(bad), ad.tensor(q), ad.tensor(q), None)


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        x = ad.tensor(np.full((1, 8), 3.7))
        gain = ad.tensor(np.ones(8))
        bias = ad.tensor(np.zeros(8))
        out = ad.layer_norm(x, gain, bias, eps=1e-5)
        np.testing.assert_allclose(out.data, np.zeros((1, 8)), atol=1e-6)

    def test_already_normalized_row(self):
        x = ad.tensor(np.array([[1.0, -1.0]]))
        out = ad.layer_norm(x, ad.tensor(np.ones(2)), ad.tensor(np.zeros(2)), eps=1e-6)
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-3)

    def test_scalar_formula_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(16)
        gain = rng.standard_normal(16)
        bias = rng.standard_normal(16)
        eps = 1e-5
        out = ad.layer_norm(ad.tensor(x[None], dtype=np.float64),
                            ad.tensor(gain, dtype=np.float64),
                            ad.tensor(bias, dtype=np.float64), eps=eps)
        expected = (x - x.mean()) / np.sqrt(x.var() + eps) * gain + bias
        np.testing.assert_allclose(out.data[0], expected, atol=1e-6)


class TestGelu:
    def test_zero(self):
        assert ad.gelu(ad.tensor([0.0])).data[0] == 0.0

    def test_asymptotes(self):
        out = ad.gelu(ad.tensor([12.0, -12.0]))
        assert abs(out.data[0] - 12.0) < 1e-5
        assert abs(out.data[1]) < 1e-5

    def test_scalar_oracle_at_one(self):
        expected = 0.5 * 1.0 * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (1.0 + 0.044715)))
        out = ad.gelu(ad.tensor([1.0]))
        assert abs(float(out.data[0]) - expected) < 1e-6


class TestBackward:
    def test_sum_gives_ones(self):
        x = ad.tensor(np.random.default_rng(0).standard_normal((3, 4)), requires_grad=True)
        ad.backward(ad.sum_all(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 4), dtype=np.float32))

    def test_stop_gradient_blocks_flow(self):
        x = ad.tensor(np.random.default_rng(1).standard_normal(5), requires_grad=True)
        loss = ad.sum_all(ad.stop_gradient(ad.scale(x, 2.0)))
        ad.backward(loss)
        assert x.grad is None

    def test_non_scalar_loss_rejected(self):
        x = ad.tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ContractError):
            ad.backward(ad.scale(x, 1.0))

    def test_composite_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        w = ad.tensor(rng.standard_normal((6, 6)), dtype=np.float64)

        def f(t):
            h = ad.gelu(ad.matmul(t, w))
            return ad.mean_all(ad.mul(h, h))

        x = ad.tensor(rng.standard_normal((3, 6)), dtype=np.float64)
        assert ad.grad_check(f, x, eps=1e-4) < 1e-6

    def test_reused_tensor_accumulates(self):
        x = ad.tensor([2.0], requires_grad=True, dtype=np.float64)
        loss = ad.sum_all(ad.mul(x, x))
        ad.backward(loss)
        np.testing.assert_allclose(x.grad, [4.0])


class TestL1Loss:
    def test_zero_residual_subgradient_is_zero(self):
        x = ad.tensor(np.ones(4), requires_grad=True)
        loss = ad.l1_loss(x, ad.tensor(np.ones(4)))
        ad.backward(loss)
        assert loss.item() == 0.0
        np.testing.assert_array_equal(x.grad, np.zeros(4, dtype=np.float32))
        assert np.isfinite(x.grad).all()

    def test_hand_case(self):
        pred = ad.tensor([[1.0, 0.0], [0.0, 2.0]])
        target = ad.tensor(np.zeros((2, 2)))
        assert abs(ad.l1_loss(pred, target).item() - 0.75) < 1e-7


class TestGradCheck:
    def test_quadratic(self):
        x = ad.tensor(np.random.default_rng(0).standard_normal(8), dtype=np.float64)
        err = ad.grad_check(lambda t: ad.scale(ad.sum_all(ad.mul(t, t)), 0.5), x, eps=1e-5)
        assert err < 1e-6

    def test_constant_function(self):
        x = ad.tensor(np.random.default_rng(1).standard_normal(4), dtype=np.float64)
        zero = np.zeros(4)
        err = ad.grad_check(
            lambda t: ad.sum_all(ad.mul(t, ad.tensor(zero, dtype=np.float64))), x, eps=1e-3
        )
        assert err == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_primitives_under_1e4(self, seed):
        rng = np.random.default_rng(seed)
        w = ad.tensor(rng.standard_normal((5, 5)), dtype=np.float64)
        gain = ad.tensor(rng.standard_normal(5) * 0.1 + 1.0, dtype=np.float64)
        bias = ad.tensor(rng.standard_normal(5) * 0.1, dtype=np.float64)

        def f(t):
            h = ad.layer_norm(ad.matmul(t, w), gain, bias, 1e-5)
            h = ad.gelu(h)
            h = ad.softmax_lastdim(h)
            return ad.l1_loss(h, ad.tensor(np.zeros(h.data.shape), dtype=np.float64))

        x = ad.tensor(rng.standard_normal((4, 5)), dtype=np.float64)
        assert ad.grad_check(f, x, eps=1e-3) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_every_primitive_grad_checks(seed):
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((3, 4))
    other = ad.tensor(rng.standard_normal((3, 4)), dtype=np.float64)
    suffix = ad.tensor(rng.standard_normal(4), dtype=np.float64)
    w = ad.tensor(rng.standard_normal((4, 5)), dtype=np.float64)
    gain = ad.tensor(rng.standard_normal(4) * 0.1 + 1.0, dtype=np.float64)
    bias = ad.tensor(rng.standard_normal(4) * 0.1, dtype=np.float64)
    idx = np.array([2, 0])
    gidx = rng.integers(0, 4, size=3)
    target = ad.tensor(rng.standard_normal((3, 4)), dtype=np.float64)

    cases = {
        "add": lambda t: ad.sum_all(ad.add(t, other)),
        "add_suffix": lambda t: ad.sum_all(ad.add(t, suffix)),
        "sub": lambda t: ad.sum_all(ad.sub(t, other)),
        "neg": lambda t: ad.sum_all(ad.neg(t)),
        "mul": lambda t: ad.sum_all(ad.mul(t, other)),
        "mul_suffix": lambda t: ad.sum_all(ad.mul(t, suffix)),
        "scale": lambda t: ad.sum_all(ad.scale(t, -1.7)),
        "affine_const": lambda t: ad.sum_all(ad.affine_const(t, 0.5, 2.0)),
        "log": lambda t: ad.sum_all(ad.log(ad.affine_const(ad.mul(t, t), 1.0, 0.5))),
        "powf": lambda t: ad.sum_all(ad.powf(ad.affine_const(ad.mul(t, t), 1.0, 0.1), 1.7)),
        "clamp_min": lambda t: ad.sum_all(ad.clamp_min(t, 0.25)),
        "gelu": lambda t: ad.sum_all(ad.gelu(t)),
        "rotate_pairs": lambda t: ad.sum_all(ad.mul(ad.rotate_pairs(t), other)),
        "reshape": lambda t: ad.sum_all(ad.mul(ad.reshape(t, (4, 3)), ad.tensor(
            np.arange(12).reshape(4, 3), dtype=np.float64))),
        "transpose": lambda t: ad.sum_all(ad.mul(ad.transpose(t, (1, 0)), ad.tensor(
            np.arange(12).reshape(4, 3), dtype=np.float64))),
        "concat": lambda t: ad.sum_all(ad.mul(ad.concat([t, t], axis=1), ad.tensor(
            np.arange(24).reshape(3, 8), dtype=np.float64))),
        "index_select": lambda t: ad.sum_all(ad.mul(ad.index_select(t, idx, 0), ad.tensor(
            np.arange(8).reshape(2, 4), dtype=np.float64))),
        "expand_leading": lambda t: ad.sum_all(ad.mul(ad.expand_leading(t, (2,)), ad.tensor(
            np.arange(24).reshape(2, 3, 4), dtype=np.float64))),
        "gather_rows": lambda t: ad.sum_all(ad.gather_rows(t, gidx)),
        "matmul": lambda t: ad.sum_all(ad.matmul(t, w)),
        "layer_norm": lambda t: ad.sum_all(ad.mul(ad.layer_norm(t, gain, bias, 1e-5), other)),
        "softmax": lambda t: ad.sum_all(ad.mul(ad.softmax_lastdim(t), other)),
        "mean": lambda t: ad.mean_all(ad.mul(t, t)),
        "l1_loss": lambda t: ad.l1_loss(t, target),
        "mse_loss": lambda t: ad.mse_loss(t, target),
        "attention": lambda t: ad.sum_all(ad.attention(
            ad.reshape(t, (1, 1, 3, 4)), ad.reshape(other, (1, 1, 3, 4)),
            ad.reshape(ad.mul(other, other), (1, 1, 3, 4)), None)),
    }
    for name, f in cases.items():
        x = ad.tensor(x0, dtype=np.float64)
        err = ad.grad_check(f, x, eps=1e-3)
        assert err < 1e-4, f"{name}: {err}"


def test_forward_determinism():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 8)).astype(np.float32)
    w = rng.standard_normal((8, 8)).astype(np.float32)

    def run():
        return ad.gelu(ad.softmax_lastdim(ad.matmul(ad.tensor(x), ad.tensor(w)))).data

    np.testing.assert_array_equal(run(), run())


def test_forward_outputs_finite_on_finite_inputs():
    rng = np.random.default_rng(8)
    x = ad.tensor(rng.standard_normal((6, 6)) * 50)
    out = ad.softmax_lastdim(x)
    assert np.isfinite(out.data).all()
    out2 = ad.layer_norm(ad.tensor(np.zeros((2, 6))), ad.tensor(np.ones(6)),
                         ad.tensor(np.zeros(6)), 1e-5)
    assert np.isfinite(out2.data).all()
