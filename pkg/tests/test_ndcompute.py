import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from sparseprime import ndcompute as nd
from sparseprime.selftest import PRIMITIVE_TOL, check_primitives, primitive_cases, sign_flipped


def grads_of(fn, *params):
    with nd.Tape() as tape:
        loss = fn()
        tape.backward(loss)
    return [p.grad for p in params]


def test_matmul_identity(rng):
    a = rng.normal(size=(4, 6)).astype(np.float32)
    np.testing.assert_array_equal(nd.matmul(a, np.eye(6, dtype=np.float32)).data, a)


def test_batched_matmul(rng):
    a, b = rng.normal(size=(3, 4, 5)), rng.normal(size=(5, 2))
    np.testing.assert_allclose(nd.matmul(a, b).data, a @ b, rtol=1e-5)


def test_softmax_uniform_row():
    np.testing.assert_allclose(nd.softmax(np.full((2, 5), 3.0)).data, 0.2, rtol=1e-6)


@given(hnp.arrays(np.float64, (3, 7), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    p = nd.softmax(x, axis=-1).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, rtol=1e-5)
    assert (p >= 0).all()


def test_relu_gate():
    x = nd.Tensor([2.0, -3.0], requires_grad=True)
    (g,) = grads_of(lambda: nd.sum(nd.relu(x)), x)
    assert g.tolist() == [1.0, 0.0]


def test_layer_norm_statistics(rng):
    x = rng.normal(3.0, 5.0, size=(4, 16))
    y = nd.layer_norm(x, np.ones(16), np.zeros(16)).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-5)
    np.testing.assert_allclose(y.std(axis=-1), 1.0, atol=1e-3)


def test_log_softmax_consistent(rng):
    x = rng.normal(size=(3, 5))
    np.testing.assert_allclose(np.exp(nd.log_softmax(x).data), nd.softmax(x).data, rtol=1e-5)


def test_embedding_lookup_accumulates_repeats():
    table = nd.Tensor(np.zeros((4, 2)), requires_grad=True)
    idx = np.array([1, 1, 3])
    (g,) = grads_of(lambda: nd.sum(nd.embedding_lookup(table, idx)), table)
    assert g[:, 0].tolist() == [0.0, 2.0, 0.0, 1.0]


def test_two_path_accumulation():
    # y = x*x + 3x uses x along two paths; dy/dx = 2x + 3
    x = nd.Tensor([1.5, -2.0], requires_grad=True)
    (g,) = grads_of(lambda: nd.sum(nd.add(nd.mul(x, x), nd.scale(x, 3.0))), x)
    np.testing.assert_allclose(g, [6.0, -1.0])


def test_sum_of_squares_gradient(rng):
    theta = nd.Tensor(rng.normal(size=10), requires_grad=True)
    (g,) = grads_of(lambda: nd.sum(nd.mul(theta, theta)), theta)
    np.testing.assert_allclose(g, 2 * theta.data, rtol=1e-6)
    assert nd.gradcheck(lambda: nd.sum(nd.mul(theta, theta)), [theta]) < 1e-3


def test_constant_function_gradient_zero():
    theta = nd.Tensor(np.ones(3), requires_grad=True)
    (g,) = grads_of(lambda: nd.sum(nd.scale(nd.Tensor(np.ones(3)), 2.0)), theta)
    assert g is None
    assert nd.gradcheck(lambda: nd.add(nd.scale(nd.sum(theta), 0.0), 4.0), [theta]) == 0.0


def test_every_primitive_passes_gradcheck():
    errs = check_primitives()
    assert set(errs) == set(nd.BACKWARD)
    bad = {k: v for k, v in errs.items() if v >= PRIMITIVE_TOL}
    assert not bad


@pytest.mark.parametrize("op", ["matmul", "layer_norm", "softmax", "gelu", "embedding_lookup", "mean"])
def test_sign_flip_is_detected(op):
    fn, params = primitive_cases()[op]
    with sign_flipped(op):
        assert nd.gradcheck(fn, params) > 0.5
    assert nd.gradcheck(fn, params) < PRIMITIVE_TOL


def test_gradcheck_restores_parameters(rng):
    data = rng.normal(size=5).astype(np.float32)
    p = nd.Tensor(data.copy(), requires_grad=True)
    nd.gradcheck(lambda: nd.sum(nd.mul(p, p)), [p])
    assert p.data.dtype == np.float32
    np.testing.assert_array_equal(p.data, data)


def test_no_tape_no_record():
    w = nd.Tensor(np.ones(3), requires_grad=True)
    out = nd.mul(w, 2.0)
    with nd.Tape() as tape:
        nd.mul(nd.Tensor(np.ones(3)), 2.0)
    assert out.requires_grad and tape.records == []


def test_non_finite_raises():
    with pytest.raises(nd.NumericError):
        nd.log(np.array([-1.0]))


def test_sgd_step_examples():
    p = nd.Tensor([1.0])
    nd.sgd_step([p], [np.array([1.0], dtype=np.float32)], 0.01)
    assert p.data[0] == pytest.approx(0.99)
    q = nd.Tensor([1.0, 2.0])
    nd.sgd_step([q], [np.zeros(2, dtype=np.float32)], 0.5)
    assert q.data.tolist() == [1.0, 2.0]
    with pytest.raises(ValueError):
        nd.sgd_step([q], [np.zeros(3)], 0.1)


@given(st.floats(0.001, 1.0), st.floats(0.001, 1.0), st.floats(-5, 5), st.floats(-5, 5))
def test_sgd_linear_in_lr(a, b, theta, g):
    with nd.precision(np.float64):
        one = nd.Tensor([theta])
        two = nd.Tensor([theta])
        grad = np.array([g])
        nd.sgd_step([one], [grad], a + b)
        nd.sgd_step([two], [grad], a)
        nd.sgd_step([two], [grad], b)
    assert one.data[0] == pytest.approx(two.data[0], abs=1e-12)


def test_precision_context():
    with nd.precision(np.float64):
        assert nd.Tensor([1.0]).data.dtype == np.float64
    assert nd.Tensor([1.0]).data.dtype == np.float32
