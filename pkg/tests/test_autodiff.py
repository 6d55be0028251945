import math

import numpy as np
import pytest

import sdparse.autodiff as ad
from sdparse.autodiff import Tape, Tensor


def run_backward(build):
    with Tape() as tape:
        loss = build()
    ad.backward(tape, loss)
    return tape, loss


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(ad.matmul(eye, m).data, m.data)

    def test_zero_annihilator(self):
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        z = Tensor(np.zeros((2, 2)))
        assert np.array_equal(ad.matmul(m, z).data, np.zeros((2, 2)))

    def test_hand_expansion(self):
        # 1*3 + 2*4 = 11
        out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ad.DimensionError, match=r"2x3.*4x2"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    def test_backward_rules(self):
        a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        b = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
        _, loss = run_backward(lambda: ad.sum_all(ad.matmul(a, b)))
        g = np.ones((2, 4))
        assert np.allclose(a.grad, g @ b.data.T)
        assert np.allclose(b.grad, a.data.T @ g)


class TestConcat:
    def test_two_columns(self):
        out = ad.concat([Tensor([[1.0], [2.0]]), Tensor([[3.0], [4.0]])], axis=1)
        assert out.data.tolist() == [[1.0, 3.0], [2.0, 4.0]]

    def test_single_part_identity(self):
        x = Tensor([[5.0, 6.0]])
        assert np.array_equal(ad.concat([x], axis=0).data, x.data)

    def test_glove_width_arithmetic(self):
        # 100-dim word embedding next to a 125-dim pretrained projection
        out = ad.concat([Tensor(np.zeros((1, 100))), Tensor(np.zeros((1, 125)))], axis=1)
        assert out.shape == (1, 225)

    def test_incompatible_shapes(self):
        with pytest.raises(ad.DimensionError):
            ad.concat([Tensor(np.ones((2, 2))), Tensor(np.ones((3, 2)))], axis=1)

    def test_backward_splits(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones((2, 3)), requires_grad=True)
        run_backward(lambda: ad.sum_all(ad.scale(ad.concat([a, b], axis=1), 2.0)))
        assert np.array_equal(a.grad, np.full((2, 2), 2.0))
        assert np.array_equal(b.grad, np.full((2, 3), 2.0))


class TestElementwise:
    def test_sigmoid_symmetry_point(self):
        assert ad.sigmoid(Tensor(0.0)).item() == 0.5

    def test_relu_negative_clamp(self):
        assert ad.relu(Tensor(-3.2)).item() == 0.0

    def test_tanh_reference_value(self):
        assert ad.tanh(Tensor(1.0)).item() == pytest.approx(0.761594, abs=5e-7)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="op-kind"):
            ad.elementwise("exp", Tensor(1.0))

    def test_dispatcher_matches_functions(self):
        x = Tensor([[0.3, -1.2]])
        y = Tensor([[2.0, 2.0]])
        assert np.array_equal(ad.elementwise("add", x, y).data, (x.data + y.data))
        assert np.array_equal(ad.elementwise("multiply", x, y).data, (x.data * y.data))
        assert np.array_equal(ad.elementwise("tanh", x).data, np.tanh(x.data))

    def test_non_broadcastable(self):
        with pytest.raises(ad.DimensionError):
            ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))
        # output shape is pinned to the first operand
        with pytest.raises(ad.DimensionError):
            ad.add(Tensor(np.ones((1, 3))), Tensor(np.ones((4, 3))))

    def test_trailing_broadcast_bias(self):
        x = Tensor(np.zeros((3, 4)))
        b = Tensor(np.arange(4.0), requires_grad=True)
        run_backward(lambda: ad.sum_all(ad.add(x, b)))
        assert np.array_equal(b.grad, np.full(4, 3.0))


class TestSoftmaxXent:
    def test_uniform_two_way(self):
        loss = ad.softmax_xent(Tensor([[0.0, 0.0]]), [0], [True])
        assert loss.item() == pytest.approx(math.log(2.0), rel=1e-12)

    def test_all_masked_rows(self):
        logits = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
        _, loss = run_backward(lambda: ad.softmax_xent(logits, [0, 1], [False, False]))
        assert loss.item() == 0.0
        assert np.array_equal(logits.grad, np.zeros((2, 2)))

    def test_confident_correct(self):
        # -ln(e^2 / (e^2 + 1)) = ln(1 + e^-2)
        loss = ad.softmax_xent(Tensor([[2.0, 0.0]]), [0], [True])
        assert loss.item() == pytest.approx(0.1269280110429726, rel=1e-12)

    def test_gold_out_of_range(self):
        with pytest.raises(IndexError):
            ad.softmax_xent(Tensor([[0.0, 0.0]]), [2], [True])

    def test_masked_rows_zero_gradient(self):
        logits = Tensor(np.random.default_rng(0).uniform(-2, 2, (4, 3)), requires_grad=True)
        mask = [True, False, True, False]
        run_backward(lambda: ad.softmax_xent(logits, [0, 1, 2, 0], mask))
        assert np.array_equal(logits.grad[1], np.zeros(3))
        assert np.array_equal(logits.grad[3], np.zeros(3))
        assert np.abs(logits.grad[0]).sum() > 0


class TestSigmoidXent:
    def test_half_probability(self):
        ones = Tensor(np.ones((1, 1)))
        zeros = Tensor(np.zeros((1, 1)))
        logit = Tensor(np.zeros((1, 1)))
        mask = np.ones((1, 1), dtype=bool)
        assert ad.sigmoid_xent(logit, ones, mask).item() == pytest.approx(math.log(2.0))
        assert ad.sigmoid_xent(logit, zeros, mask).item() == pytest.approx(math.log(2.0))

    def test_confident_positive(self):
        loss = ad.sigmoid_xent(Tensor([[3.0]]), Tensor([[1.0]]), np.ones((1, 1), dtype=bool))
        assert loss.item() == pytest.approx(0.04858735157374196, rel=1e-12)

    def test_gold_outside_binary(self):
        with pytest.raises(ValueError, match="0 or 1"):
            ad.sigmoid_xent(Tensor([[1.0]]), Tensor([[0.5]]), np.ones((1, 1), dtype=bool))

    def test_stabilized_at_large_logits(self):
        loss = ad.sigmoid_xent(Tensor([[80.0, -80.0]]), Tensor([[1.0, 0.0]]), np.ones((1, 2), dtype=bool))
        assert np.isfinite(loss.item())
        assert loss.item() == pytest.approx(0.0, abs=1e-30)

    def test_masked_cells_zero_gradient(self):
        logits = Tensor(np.random.default_rng(1).uniform(-2, 2, (3, 3)), requires_grad=True)
        gold = Tensor((np.random.default_rng(2).uniform(size=(3, 3)) > 0.5).astype(float))
        mask = np.eye(3, dtype=bool)
        run_backward(lambda: ad.sigmoid_xent(logits, gold, mask))
        assert np.array_equal(logits.grad[~mask], np.zeros(6))


class TestBackward:
    def test_linear_sum(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        run_backward(lambda: ad.sum_all(x))
        assert np.array_equal(x.grad, np.ones(3))

    def test_fanout_accumulation(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        run_backward(lambda: ad.sum_all(ad.add(x, x)))
        assert np.array_equal(x.grad, np.full(2, 2.0))

    def test_non_scalar_loss_rejected(self):
        with Tape() as tape:
            x = Tensor([1.0, 2.0], requires_grad=True)
            y = ad.scale(x, 2.0)
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(tape, y)

    def test_loss_not_on_tape_rejected(self):
        with Tape() as tape:
            ad.scale(Tensor([1.0]), 2.0)
        stray = Tensor(1.0)
        with pytest.raises(ValueError, match="not produced"):
            ad.backward(tape, stray)

    def test_grad_accumulates_across_calls(self):
        x = Tensor([1.0], requires_grad=True)
        run_backward(lambda: ad.sum_all(x))
        run_backward(lambda: ad.sum_all(x))
        assert np.array_equal(x.grad, np.array([2.0]))

    def test_accumulation_linearity(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.uniform(-2, 2, (3, 3)), requires_grad=True)

        def f():
            return ad.sum_all(ad.tanh(x))

        def g():
            return ad.sum_all(ad.mul(x, x))

        run_backward(f)
        gf = x.grad.copy()
        ad.zero_grad([x])
        run_backward(g)
        gg = x.grad.copy()
        ad.zero_grad([x])
        run_backward(lambda: ad.add(f(), g()))
        assert np.allclose(x.grad, gf + gg, rtol=0, atol=1e-15)

    def test_composite_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        w = Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
        x = Tensor(rng.uniform(-2, 2, (2, 3)), requires_grad=True)
        b = Tensor(rng.uniform(-2, 2, (4,)), requires_grad=True)

        def build():
            h = ad.tanh(ad.add(ad.matmul(x, w), b))
            s = ad.sigmoid(ad.matmul(h, ad.swap01(h)))
            return ad.sigmoid_xent(s, Tensor(np.eye(2)), np.ones((2, 2), dtype=bool))

        assert ad.gradcheck(build, [w, x, b]) < 1e-4

    def test_tape_replay_determinism(self):
        def run():
            rng = np.random.default_rng(5)
            x = Tensor(rng.uniform(-1, 1, (4, 4)), requires_grad=True)
            with Tape() as tape:
                loss = ad.sigmoid_xent(
                    ad.matmul(x, x), Tensor(np.eye(4)), np.ones((4, 4), dtype=bool)
                )
            ad.backward(tape, loss)
            return loss.item(), x.grad.copy()

        l1, g1 = run()
        l2, g2 = run()
        assert l1 == l2
        assert np.array_equal(g1, g2)


class TestShapeOps:
    def test_slice_and_backward(self):
        x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
        out = ad.slice_axis(x, 1, 1, 3)
        assert np.array_equal(out.data, x.data[:, 1:3])
        run_backward(lambda: ad.sum_all(ad.slice_axis(x, 1, 1, 3)))
        expect = np.zeros((3, 4))
        expect[:, 1:3] = 1.0
        assert np.array_equal(x.grad, expect)

    def test_gather_scatter(self):
        t = Tensor(np.arange(8.0).reshape(4, 2), requires_grad=True)
        out = ad.gather_rows(t, [3, 0, 3])
        assert np.array_equal(out.data, t.data[[3, 0, 3]])
        run_backward(lambda: ad.sum_all(ad.gather_rows(t, [3, 0, 3])))
        assert np.array_equal(t.grad, np.array([[1.0, 1], [0, 0], [0, 0], [2, 2]]))

    def test_gather_bad_id(self):
        with pytest.raises(IndexError):
            ad.gather_rows(Tensor(np.zeros((2, 2))), [2])

    def test_reshape_swap_flip(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        assert ad.reshape(x, (3, 2)).shape == (3, 2)
        assert np.array_equal(ad.swap01(x).data, x.data.T)
        assert np.array_equal(ad.flip_rows(x).data, x.data[::-1])
        for fn in (lambda: ad.reshape(x, (6,)), lambda: ad.swap01(x), lambda: ad.flip_rows(x)):
            ad.zero_grad([x])
            run_backward(lambda fn=fn: ad.sum_all(fn()))
            assert np.array_equal(x.grad, np.ones((2, 3)))


class TestAdam:
    def test_zero_grad_is_stationary(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        p.grad = np.zeros(2)
        state = ad.AdamState([p])
        ad.adam_step([p], state, lr=1e-3, beta1=0.0, beta2=0.95, eps=1e-12, l2=0.0)
        assert np.array_equal(p.data, np.array([1.0, -2.0]))

    def test_beta1_zero_first_moment_is_gradient(self):
        p = Tensor([0.5], requires_grad=True)
        p.grad = np.array([0.7])
        state = ad.AdamState([p])
        ad.adam_step([p], state, beta1=0.0)
        assert np.array_equal(state.m[0], np.array([0.7]))

    def test_single_scalar_first_step(self):
        # m_hat = 1, v_hat = 0.05/(1-0.95) = 1 -> update = lr / (1 + eps)
        p = Tensor([2.0], requires_grad=True)
        p.grad = np.array([1.0])
        state = ad.AdamState([p])
        ad.adam_step([p], state, lr=1e-3, beta1=0.0, beta2=0.95, eps=1e-12)
        assert p.data[0] == pytest.approx(2.0 - 1e-3, rel=1e-9)

    def test_l2_pulls_toward_zero(self):
        p = Tensor([5.0], requires_grad=True)
        p.grad = np.zeros(1)
        state = ad.AdamState([p])
        ad.adam_step([p], state, lr=1e-3, l2=0.1)
        assert p.data[0] < 5.0

    def test_missing_gradient(self):
        p = Tensor([1.0], requires_grad=True, name="w")
        with pytest.raises(ValueError, match="w"):
            ad.adam_step([p], ad.AdamState([p]))


class TestOpGradients:
    """Analytic vs central finite differences on random inputs in [-2, 2]."""

    @pytest.mark.parametrize("op", ["sigmoid", "tanh", "relu", "identity"])
    def test_unary(self, op):
        rng = np.random.default_rng(hash(op) % 2**32)
        vals = rng.uniform(-2, 2, (3, 4))
        if op == "relu":
            vals = np.where(np.abs(vals) < 0.05, 0.2, vals)  # stay off the kink
        x = Tensor(vals, requires_grad=True)
        assert ad.gradcheck(lambda: ad.sum_all(ad.tanh(ad.elementwise(op, x))), [x]) < 1e-4

    @pytest.mark.parametrize(
        "shapes", [((3, 4), (3, 4)), ((3, 4), (4,)), ((3, 4), (3, 1)), ((3, 4), ())]
    )
    @pytest.mark.parametrize("kind", ["add", "multiply"])
    def test_binary_broadcast(self, kind, shapes):
        rng = np.random.default_rng(9)
        a = Tensor(rng.uniform(-2, 2, shapes[0]), requires_grad=True)
        b = Tensor(rng.uniform(-2, 2, shapes[1]), requires_grad=True)
        assert ad.gradcheck(lambda: ad.sum_all(ad.tanh(ad.elementwise(kind, a, b))), [a, b]) < 1e-4

    def test_losses(self):
        rng = np.random.default_rng(10)
        logits = Tensor(rng.uniform(-2, 2, (4, 3)), requires_grad=True)
        gold = rng.integers(0, 3, 4)
        mask = np.array([True, True, False, True])
        assert ad.gradcheck(lambda: ad.softmax_xent(logits, gold, mask), [logits]) < 1e-4
        s = Tensor(rng.uniform(-2, 2, (3, 3)), requires_grad=True)
        y = Tensor((rng.uniform(size=(3, 3)) > 0.4).astype(float))
        m = rng.uniform(size=(3, 3)) > 0.3
        assert ad.gradcheck(lambda: ad.sigmoid_xent(s, y, m), [s]) < 1e-4
