import threading

import numpy as np
import pytest

from nalustock import autodiff as ad
from nalustock.autodiff import Tape, Variable, grad_check
from nalustock.errors import AutodiffError

from conftest import scalar_probe


def test_sum_gradient_is_ones():
    x = Variable(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum(x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_square_of_scalar():
    x = Variable(np.array([3.0]), requires_grad=True)
    with Tape() as tape:
        loss = x * x
    tape.backward(loss)
    assert x.grad[0] == 6.0


def test_dense_mse_matches_finite_differences(rng):
    W = Variable(rng.normal(size=(4, 3)), requires_grad=True)
    b = Variable(rng.normal(size=3), requires_grad=True)
    x = ad.constant(rng.normal(size=(5, 4)))
    y = ad.constant(rng.normal(size=(5, 3)))

    def loss(_):
        return ad.mean(ad.square(ad.sub(ad.add_bias(ad.matmul(x, W), b), y)))

    assert grad_check(loss, W) <= 1e-5
    assert grad_check(loss, b) <= 1e-5


def test_grad_check_sum_of_squares(rng):
    x = Variable(rng.normal(size=(3, 4)))
    assert grad_check(lambda v: ad.sum(ad.square(v)), x) <= 1e-7


def test_grad_check_constant_function(rng):
    x = Variable(rng.normal(size=4))
    assert grad_check(lambda v: ad.sum(ad.constant(np.ones(3))), x) <= 1e-8
    assert grad_check(lambda v: ad.sum(ad.mul(v, ad.constant(np.zeros(4)))), x) <= 1e-8


def test_grad_check_rejects_bad_step():
    with pytest.raises(ValueError):
        grad_check(lambda v: ad.sum(v), Variable(np.ones(2)), h=1e-2)


def test_backward_accumulates_across_calls(rng):
    x = Variable(rng.normal(size=(2, 3)), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum(ad.tanh(ad.mul(x, x)))
    tape.backward(loss)
    once = x.grad.copy()
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * once, rtol=0, atol=0)


def test_fan_out_accumulates():
    x = Variable(np.array([2.0]), requires_grad=True)
    with Tape() as tape:
        y = ad.tanh(x)
        loss = ad.add(ad.mul(y, y), y)  # y^2 + y
    tape.backward(loss)
    t = np.tanh(2.0)
    assert x.grad[0] == pytest.approx((2 * t + 1) * (1 - t * t), rel=1e-14)


def test_non_requires_grad_leaf_stays_zero(rng):
    a = Variable(rng.normal(size=3), requires_grad=True)
    c = Variable(rng.normal(size=3), requires_grad=False)
    with Tape() as tape:
        loss = ad.sum(ad.mul(a, c))
    tape.backward(loss)
    np.testing.assert_array_equal(c.grad, 0.0)
    np.testing.assert_allclose(a.grad, c.value)


def test_backward_errors():
    x = Variable(np.ones(3), requires_grad=True)
    with Tape() as tape:
        pass
    with pytest.raises(AutodiffError, match="empty"):
        tape.backward(x)
    with Tape() as tape:
        y = ad.tanh(x)
    with pytest.raises(AutodiffError, match="scalar"):
        tape.backward(y)


def test_tape_records_in_topological_order(rng):
    x = Variable(rng.normal(size=(2, 2)), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum(ad.sigmoid(ad.matmul(x, x)))
    seen = {x.node_id}
    for rec in tape.records:
        assert all(v.node_id in seen for v in rec.inputs)
        seen.add(rec.output.node_id)


def test_no_tape_means_no_recording():
    x = Variable(np.ones(2), requires_grad=True)
    y = ad.tanh(x)
    assert ad.active_tape() is None and not y.is_leaf


def test_abs_and_relu_kinks_have_zero_gradient():
    x = Variable(np.array([0.0, 0.0]), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum(ad.add(ad.abs(x), ad.relu(x)))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])


def test_log_abs_epsilon_path_finite_at_zero():
    x = Variable(np.array([0.0, -2.0, 3.0]), requires_grad=True)
    with Tape() as tape:
        loss = ad.sum(ad.log(ad.add(ad.abs(x), ad.constant(1e-7))))
    tape.backward(loss)
    assert np.all(np.isfinite(x.grad))
    np.testing.assert_allclose(x.grad[1:], [-1 / (2 + 1e-7), 1 / (3 + 1e-7)])


@pytest.mark.parametrize("op", [ad.tanh, ad.sigmoid, ad.exp, ad.square, ad.neg])
def test_pointwise_grads(op, rng):
    x = Variable(rng.uniform(0.1, 1.0, size=(3, 4)))
    probe = scalar_probe(rng, (3, 4))
    assert grad_check(lambda v: probe(op(v)), x) <= 1e-6


def test_reshape_transpose_grads(rng):
    x = Variable(rng.normal(size=(2, 6)))
    probe = scalar_probe(rng, (3, 4))
    assert grad_check(lambda v: probe(ad.reshape(v, (3, -1))), x) <= 1e-6
    probe_t = scalar_probe(rng, (6, 2))
    assert grad_check(lambda v: probe_t(ad.transpose(v)), x) <= 1e-6


def test_scalar_broadcast_ops(rng):
    x = Variable(rng.uniform(0.1, 1, size=(2, 3)))
    probe = scalar_probe(rng, (2, 3))
    assert grad_check(lambda v: probe(1.0 - v * 3.0 + 2.0), x) <= 1e-6
    c = Variable(np.array(0.7))
    assert grad_check(lambda v: probe(ad.mul(x, v)), c) <= 1e-6


def test_tapes_are_thread_local(rng):
    results = {}

    def work(k):
        x = Variable(np.array([float(k)]), requires_grad=True)
        with Tape() as tape:
            loss = ad.mul(x, x)
        tape.backward(loss)
        results[k] = (x.grad[0], len(tape))

    threads = [threading.Thread(target=work, args=(k,)) for k in range(1, 6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == {k: (2.0 * k, 1) for k in range(1, 6)}
