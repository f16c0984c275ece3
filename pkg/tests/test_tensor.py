import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lgstime import tensor as T
from lgstime.errors import DegenerateRowError, DimensionError, StaleTapeError
from lgstime.gradcheck import check_gradients, numeric_grad
from lgstime.tensor import MASK_VALUE, GradTape, Tensor, parameter


def test_matmul_identity_and_dot():
    A = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(Tensor(np.eye(2)), A).data, A.data)
    assert T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_grad_is_row_sums_of_b(rng):
    a = parameter(rng.uniform(-1, 1, (3, 4)))
    b = Tensor(rng.uniform(-1, 1, (4, 2)))
    loss = lambda: T.sum_(T.matmul(a, b))
    fd = numeric_grad(loss, a)
    expected = np.tile(b.data.sum(axis=1), (3, 1))
    np.testing.assert_allclose(fd, expected, rtol=1e-8)
    with GradTape() as tape:
        out = loss()
    g = tape.backward(out)[a]
    np.testing.assert_allclose(g, expected, rtol=1e-12)


def test_batched_matmul_against_shared_weight(rng):
    x = parameter(rng.uniform(-1, 1, (2, 5, 3)))
    W = parameter(rng.uniform(-1, 1, (3, 4)))
    G = rng.standard_normal((2, 5, 4))
    errs = check_gradients(lambda: T.sum_(T.mul(T.matmul(x, W), Tensor(G))), {"x": x, "W": W})
    assert max(errs.values()) < 1e-8


def test_activation_special_values():
    assert T.sigmoid(Tensor([0.0])).data[0] == 0.5
    assert T.tanh(Tensor([0.0])).data[0] == 0.0
    x = parameter([-50.0])
    with GradTape() as tape:
        y = T.sigmoid(x)
        loss = T.sum_(y)
    g = tape.backward(loss)[x]
    assert 0.0 < y.data[0] <= 1e-20
    assert np.all(np.isfinite(g))
    fd = numeric_grad(lambda: T.sum_(T.sigmoid(x)), x)
    np.testing.assert_allclose(g, fd, rtol=1e-4)


def test_elementwise_dispatch_and_shape_check():
    a, b = Tensor([1.0, 2.0]), Tensor([3.0, 4.0])
    assert T.elementwise("mul", a, b).data.tolist() == [3.0, 8.0]
    with pytest.raises(DimensionError):
        T.elementwise("add", a, Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        T.elementwise("relu", a)


def test_bias_broadcast_only_over_rows():
    x = Tensor(np.zeros((3, 2)))
    assert T.add_bias(x, Tensor([1.0, 2.0])).data.tolist() == [[1, 2]] * 3
    with pytest.raises(DimensionError):
        T.add_bias(x, Tensor([1.0, 2.0, 3.0]))


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax_rows(Tensor([[0.0, 0, 0]])).data, [[1 / 3] * 3])
    np.testing.assert_allclose(T.softmax_rows(Tensor([[1.0, 2, 3]])).data,
                               [[0.09003, 0.24473, 0.66524]], atol=1e-5)
    s = T.softmax_rows(Tensor([[0.4, MASK_VALUE, MASK_VALUE]])).data
    assert s[0, 0] == 1.0 and s[0, 1] == 0.0


def test_softmax_direct_evaluation():
    row = np.array([1.0, 2.0, 3.0])
    direct = np.exp(row) / np.exp(row).sum()
    np.testing.assert_allclose(T.softmax_rows(Tensor([row])).data[0], direct, rtol=1e-14)


def test_fully_masked_row_rejected():
    with pytest.raises(DegenerateRowError):
        T.softmax_rows(Tensor([[0.0, 1.0], [MASK_VALUE, MASK_VALUE]]))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 9)),
              elements=st.floats(-700, 700)))
def test_softmax_rows_sum_to_one(x):
    s = T.softmax_rows(Tensor(x)).data
    assert np.all(np.abs(s.sum(axis=1) - 1.0) <= 1e-9)


def test_concat_slice_round_trip():
    assert T.concat([Tensor([1.0, 2.0]), Tensor([3.0])]).data.tolist() == [1, 2, 3]
    assert T.slice_columns(Tensor([[1.0, 2, 3]]), 1, 3).data.tolist() == [[2, 3]]
    a, b = Tensor(np.arange(6.0).reshape(2, 3)), Tensor(np.arange(4.0).reshape(2, 2))
    c = T.concat([a, b])
    assert np.array_equal(T.slice_columns(c, 0, 3).data, a.data)
    assert np.array_equal(T.slice_columns(c, 3, 5).data, b.data)
    with pytest.raises(DimensionError):
        T.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))])


def test_backward_trivial_cases(rng):
    x = parameter(rng.standard_normal((2, 3)))
    with GradTape() as tape:
        loss = T.sum_(x)
    assert np.array_equal(tape.backward(loss)[x], np.ones((2, 3)))
    with GradTape() as tape:
        loss = T.sum_(T.mul(x, x))
    np.testing.assert_array_equal(tape.backward(loss)[x], 2 * x.data)


def test_backward_twice_is_stale(rng):
    x = parameter(rng.standard_normal(3))
    with GradTape() as tape:
        loss = T.sum_(T.mul(x, x))
    tape.backward(loss)
    with pytest.raises(StaleTapeError):
        tape.backward(loss)


def test_two_layer_mse_matches_finite_differences(rng):
    W1 = parameter(rng.uniform(-1, 1, (4, 5)))
    b1 = parameter(rng.uniform(-1, 1, 5))
    W2 = parameter(rng.uniform(-1, 1, (5, 2)))
    X = Tensor(rng.uniform(-1, 1, (6, 4)))
    y = Tensor(rng.uniform(-1, 1, (6, 2)))
    loss = lambda: T.mse_loss(T.matmul(T.tanh(T.add_bias(T.matmul(X, W1), b1)), W2), y)
    errs = check_gradients(loss, {"W1": W1, "b1": b1, "W2": W2})
    assert max(errs.values()) < 1e-4


def test_diamond_graph_accumulates(rng):
    x = parameter(rng.uniform(-1, 1, (3, 3)))
    loss = lambda: T.sum_(T.mul(T.sigmoid(x), T.tanh(x)))
    assert check_gradients(loss, {"x": x})["x"] < 1e-8


@pytest.mark.parametrize("op", ["reshape", "transpose", "getitem", "mean_axis", "conv1d", "affine"])
def test_structural_op_gradients(op, rng):
    x = parameter(rng.uniform(-1, 1, (2, 5, 3)))
    w = parameter(rng.uniform(-1, 1, (3, 3, 4)))
    fns = {
        "reshape": lambda: T.reshape(x, (10, 3)),
        "transpose": lambda: T.transpose(x),
        "getitem": lambda: x[:, 1:4, :],
        "mean_axis": lambda: T.mean(x, axis=1),
        "conv1d": lambda: T.conv1d(x, w),
        "affine": lambda: 3.0 - 2.0 * x,
    }
    shape = fns[op]().shape
    G = rng.standard_normal(shape)
    loss = lambda: T.sum_(T.mul(fns[op](), Tensor(G)))
    tensors = {"x": x, "w": w} if op == "conv1d" else {"x": x}
    assert max(check_gradients(loss, tensors).values()) < 1e-8


def test_unused_leaf_gets_zero_grad(rng):
    a, b = parameter(rng.standard_normal(2)), parameter(rng.standard_normal(2))
    with GradTape() as tape:
        _ = T.add(a, b)
        loss = T.sum_(T.mul(a, a))
    grads = tape.backward(loss)
    assert np.array_equal(grads[b], np.zeros(2))
    assert a.grad.shape == a.shape


def test_no_tape_records_nothing(rng):
    x = parameter(rng.standard_normal(3))
    y = T.tanh(x)
    assert y.is_leaf and not y.requires_grad


def test_determinism_bit_identical(rng):
    data = rng.standard_normal((4, 4))

    def run():
        x = parameter(data.copy())
        with GradTape() as tape:
            loss = T.sum_(T.softmax_rows(T.matmul(x, T.transpose(x))))
        return loss.item(), tape.backward(loss)[x]

    (l1, g1), (l2, g2) = run(), run()
    assert l1 == l2 and np.array_equal(g1, g2)


def test_tapes_are_thread_local(rng):
    results = {}

    def worker(k):
        x = parameter(np.full(3, float(k)))
        with GradTape() as tape:
            loss = T.sum_(T.mul(x, x))
        results[k] = tape.backward(loss)[x]

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for k in range(4):
        assert np.array_equal(results[k], np.full(3, 2.0 * k))
