"""Autodiff engine: forward values, gradient rules, tape behavior."""

import math

import numpy as np
import pytest

from conftest import check_gradients, finite_difference, max_relative_error

from oraclenmt import autodiff as ad
from oraclenmt.autodiff import ShapeError, Tape, Tensor


def t(data, rg=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=rg)


class TestMatmul:
    def test_identity(self):
        out = ad.matmul(t([[1, 0], [0, 1]]), t([[3], [4]]))
        np.testing.assert_array_equal(out.data, [[3], [4]])

    def test_hand_arithmetic(self):
        out = ad.matmul(t([[1, 2]]), t([[3], [4]]))
        np.testing.assert_array_equal(out.data, [[11]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            ad.matmul(t(np.zeros((2, 3))), t(np.zeros((2, 2))))

    def test_grad_of_sum_equals_ones_bt(self):
        rng = np.random.default_rng(0)
        a = t(rng.normal(size=(3, 4)))
        b = t(rng.normal(size=(4, 2)))
        with Tape() as tape:
            loss = ad.tensor_sum(ad.matmul(a, b))
            tape.backward(loss)
        np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.data.T, rtol=1e-12)
        fd = finite_difference(lambda: float((a.data @ b.data).sum()), [a.data])[0]
        assert max_relative_error(a.grad, fd) < 1e-4


class TestElementwise:
    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(t(0.0)).item() == pytest.approx(0.5)

    def test_tanh_at_zero(self):
        assert ad.tanh(t(0.0)).item() == pytest.approx(0.0)

    def test_sigmoid_derivative_at_zero(self):
        x = t(0.0)
        with Tape() as tape:
            tape.backward(ad.sigmoid(x))
        assert float(x.grad) == pytest.approx(0.25)

    def test_dispatcher(self):
        np.testing.assert_allclose(ad.elementwise("add", t([1.0]), t([2.0])).data, [3.0])
        np.testing.assert_allclose(ad.elementwise("mul", t([2.0]), t([3.0])).data, [6.0])
        assert ad.elementwise("sigmoid", t(0.0)).item() == 0.5
        assert ad.elementwise("tanh", t(0.0)).item() == 0.0
        with pytest.raises(ValueError, match="unknown elementwise op"):
            ad.elementwise("pow", t(1.0))

    def test_incompatible_shapes(self):
        with pytest.raises(ShapeError):
            ad.add(t(np.zeros(3)), t(np.zeros(4)))
        with pytest.raises(ShapeError):
            ad.mul(t(np.zeros((2, 2))), t(np.zeros(2)))

    def test_scalar_broadcast(self):
        out = ad.add(t([1.0, 2.0]), 1.5)
        np.testing.assert_allclose(out.data, [2.5, 3.5])
        out = ad.mul(t([1.0, 2.0]), -1.0)
        np.testing.assert_allclose(out.data, [-1.0, -2.0])


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss = ad.softmax_cross_entropy(t(np.zeros(4)), 2)
        assert loss.item() == pytest.approx(math.log(4.0), abs=1e-12)

    def test_confident_correct_is_near_zero(self):
        loss = ad.softmax_cross_entropy(t([10.0, -10.0]), 0)
        assert loss.item() == pytest.approx(math.log(1.0 + math.exp(-20.0)), rel=1e-9)
        assert loss.item() == pytest.approx(2.06e-9, rel=0.01)

    def test_gradient_uniform(self):
        logits = t(np.zeros(4))
        with Tape() as tape:
            tape.backward(ad.softmax_cross_entropy(logits, 2))
        np.testing.assert_allclose(logits.grad, [0.25, 0.25, -0.75, 0.25], atol=1e-12)

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            ad.softmax_cross_entropy(t(np.zeros(4)), 4)
        with pytest.raises(IndexError):
            ad.softmax_cross_entropy(t(np.zeros(4)), -1)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(3, 5))
        targets = np.array([0, 4, 2])
        batched = ad.softmax_cross_entropy(t(logits), targets)
        singles = [ad.softmax_cross_entropy(t(logits[i]), int(targets[i])).item()
                   for i in range(3)]
        np.testing.assert_allclose(batched.data, singles, rtol=1e-12)


class TestSoftmax:
    def test_rows_normalize(self):
        rng = np.random.default_rng(1)
        s = ad.softmax(t(rng.normal(size=(6, 9)) * 10.0))
        assert np.all(s.data >= 0.0)
        np.testing.assert_allclose(s.data.sum(axis=1), 1.0, atol=1e-9)

    def test_extreme_logits_stable(self):
        s = ad.softmax(t([[1000.0, 0.0, -1000.0]]))
        assert np.all(np.isfinite(s.data))
        np.testing.assert_allclose(s.data.sum(), 1.0, atol=1e-12)


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = t([1.0, 2.0, 3.0])
        with Tape() as tape:
            tape.backward(ad.tensor_sum(x))
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_square_gradient(self):
        x = t([1.0, 2.0, 3.0])
        with Tape() as tape:
            tape.backward(ad.tensor_sum(ad.mul(x, x)))
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_loss_grad_is_one(self):
        x = t([1.0, 2.0])
        with Tape() as tape:
            loss = ad.tensor_sum(x)
            tape.backward(loss)
        assert float(loss.grad) == 1.0

    def test_non_scalar_rejected(self):
        x = t([1.0, 2.0])
        with Tape() as tape:
            y = ad.mul(x, x)
            with pytest.raises(ShapeError, match="scalar"):
                tape.backward(y)

    def test_repeated_backward_accumulates(self):
        x = t([1.0, 2.0])
        with Tape() as tape:
            loss = ad.tensor_sum(x)
            tape.backward(loss)
            tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_backward_requires_active_tape(self):
        with pytest.raises(RuntimeError):
            ad.backward(t(1.0))

    def test_tape_is_topologically_ordered(self):
        x = t([1.0, 2.0])
        with Tape() as tape:
            y = ad.mul(x, x)
            z = ad.add(y, x)
            ad.tensor_sum(z)
        assert tape.op_names() == ["mul", "add", "sum"]

    def test_deterministic_gradients(self):
        def run():
            rng = np.random.default_rng(42)
            a = t(rng.normal(size=(4, 4)))
            b = t(rng.normal(size=(4, 4)))
            with Tape() as tape:
                loss = ad.tensor_sum(ad.tanh(ad.matmul(a, b)))
                tape.backward(loss)
            return a.grad.copy(), b.grad.copy()

        g1, g2 = run(), run()
        assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])


def _rand(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


# One randomized gradient check per op, swept over many seeds: the analytic
# backward must track central finite differences on small shapes.
OP_CASES = {
    "matmul": lambda rng: (lambda a, b: ad.tensor_sum(ad.matmul(a, b)),
                           [_rand(rng, 3, 4), _rand(rng, 4, 2)]),
    "add": lambda rng: (lambda a, b: ad.tensor_sum(ad.mul(ad.add(a, b), ad.add(a, b))),
                        [_rand(rng, 5), _rand(rng, 5)]),
    "sub": lambda rng: (lambda a, b: ad.tensor_sum(ad.mul(ad.sub(a, b), ad.sub(a, b))),
                        [_rand(rng, 4), _rand(rng, 4)]),
    "mul": lambda rng: (lambda a, b: ad.tensor_sum(ad.mul(a, b)),
                        [_rand(rng, 2, 3), _rand(rng, 2, 3)]),
    "sigmoid": lambda rng: (lambda x: ad.tensor_sum(ad.sigmoid(x)), [_rand(rng, 6)]),
    "tanh": lambda rng: (lambda x: ad.tensor_sum(ad.tanh(x)), [_rand(rng, 6)]),
    "softmax": lambda rng: (
        lambda x, w: ad.tensor_sum(ad.mul(ad.softmax(x), w)),
        [_rand(rng, 3, 5), _rand(rng, 3, 5)],
    ),
    "xent": lambda rng: (
        lambda x: ad.tensor_sum(ad.softmax_cross_entropy(x, np.array([1, 0]))),
        [_rand(rng, 2, 4)],
    ),
    "sum_axis": lambda rng: (
        lambda x: ad.tensor_sum(ad.tanh(ad.tensor_sum(x, axis=1))),
        [_rand(rng, 3, 4, 2)],
    ),
    "reshape": lambda rng: (
        lambda x: ad.tensor_sum(ad.tanh(ad.reshape(x, (6,)))),
        [_rand(rng, 2, 3)],
    ),
    "concat": lambda rng: (
        lambda a, b: ad.tensor_sum(ad.tanh(ad.concat(a, b, axis=1))),
        [_rand(rng, 2, 3), _rand(rng, 2, 2)],
    ),
    "stack": lambda rng: (
        lambda a, b: ad.tensor_sum(ad.tanh(ad.stack([a, b], axis=1))),
        [_rand(rng, 2, 3), _rand(rng, 2, 3)],
    ),
    "add_bias": lambda rng: (
        lambda x, b: ad.tensor_sum(ad.tanh(ad.add_bias(x, b))),
        [_rand(rng, 4, 3), _rand(rng, 3)],
    ),
    "linear3": lambda rng: (
        lambda x, w: ad.tensor_sum(ad.tanh(ad.linear3(x, w))),
        [_rand(rng, 2, 3, 4), _rand(rng, 4, 2)],
    ),
    "embedding": lambda rng: (
        lambda tab: ad.tensor_sum(ad.tanh(ad.embedding_lookup(tab, np.array([0, 2, 2])))),
        [_rand(rng, 4, 3)],
    ),
    "gru_cell": lambda rng: (
        lambda *a: ad.tensor_sum(ad.gru_cell(*a)),
        [_rand(rng, 2, 3), _rand(rng, 2, 4), _rand(rng, 3, 8), _rand(rng, 4, 8),
         _rand(rng, 8), _rand(rng, 3, 4), _rand(rng, 4, 4), _rand(rng, 4)],
    ),
    "attention_scores": lambda rng: (
        lambda sp, ap, v: ad.tensor_sum(ad.tanh(ad.attention_scores(sp, ap, v))),
        [_rand(rng, 2, 4), _rand(rng, 2, 3, 4), _rand(rng, 4)],
    ),
    "attend": lambda rng: (
        lambda w, ann: ad.tensor_sum(ad.tanh(ad.attend(w, ann))),
        [_rand(rng, 2, 3), _rand(rng, 2, 3, 5)],
    ),
}


@pytest.mark.parametrize("op", sorted(OP_CASES))
def test_gradients_match_finite_differences(op):
    for seed in range(100):
        rng = np.random.default_rng([seed, hash(op) % (2**32)])
        build, params = OP_CASES[op](rng)
        check_gradients(lambda: build(*params), params)
