import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from mesv.errors import (ContractError, DecompositionError, DimensionError, EmptyInputError,
                         NonFiniteError, NumericDomainError, SymmetryError)
from mesv.numkernel import (Tape, Tensor, cholesky, cholesky_solve, elementwise,
                            mean_std_over_time, softmax_rows, sym_eig_jacobi, tape_backward)
from mesv.numkernel import tensor as T
from mesv.pipeline.gradcheck import grad_check


def test_matmul_identity_and_hand_example():
    x = np.arange(6.0).reshape(2, 3)
    assert_array_equal(T.matmul(np.eye(2), x).data, x)
    out = T.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
    assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_sigmoid_and_relu():
    assert elementwise("sigmoid", 0.0).item() == 0.5
    w = Tensor(-3.0, requires_grad=True)
    with Tape() as tape:
        y = elementwise("relu", w) * 1.0
    grads = tape.backward(y)
    assert y.item() == 0.0
    assert grads[w] == 0.0


def test_log_domain_error():
    with pytest.raises(NumericDomainError):
        elementwise("log", np.array([1.0, 0.0]))


def test_non_finite_input_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])


def test_softmax_rows_examples():
    assert_allclose(softmax_rows(np.full((1, 4), 7.0)).data, np.full((1, 4), 0.25), atol=1e-15)
    assert_allclose(softmax_rows(np.array([[0.0, np.log(2.0)]])).data, [[1 / 3, 2 / 3]],
                    rtol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.floats(-50, 50), st.integers(0, 2**31 - 1))
def test_softmax_rows_sum_and_shift(m, n, c, seed):
    x = np.random.default_rng(seed).normal(scale=5.0, size=(m, n))
    p = softmax_rows(x).data
    assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert_allclose(softmax_rows(x + c).data, p, atol=1e-12)


def test_mean_std_constant_and_single_frame():
    c = np.array([1.5, -2.0, 0.0])
    mu, sd = mean_std_over_time(np.tile(c[:, None], (1, 7)))
    assert_allclose(mu.data, c, atol=1e-15)
    assert_array_equal(sd.data, 0.0)
    x = np.array([[3.0], [4.0]])
    mu, sd = mean_std_over_time(x)
    assert_array_equal(mu.data, [3.0, 4.0])
    assert_array_equal(sd.data, [0.0, 0.0])


def test_mean_std_uniform_weights_match_unweighted(rng):
    m = rng.normal(size=(4, 9))
    mu0, sd0 = mean_std_over_time(m)
    mu1, sd1 = mean_std_over_time(m, np.full(9, 1 / 9))
    assert_allclose(mu1.data, mu0.data, atol=1e-14)
    assert_allclose(sd1.data, sd0.data, atol=1e-14)
    assert_allclose(sd0.data, m.std(axis=1), rtol=1e-12)


def test_mean_std_empty():
    with pytest.raises(EmptyInputError):
        mean_std_over_time(np.zeros((3, 0)))


def test_cholesky_solve_examples():
    b = np.array([[1.0, 2.0], [3.0, -4.0], [0.5, 0.0]])
    assert_allclose(cholesky_solve(np.eye(3), b), b, atol=0)
    assert_allclose(cholesky_solve(2 * np.eye(3), b), b / 2, atol=0)


def test_cholesky_rejects_indefinite():
    with pytest.raises(DecompositionError):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


@pytest.mark.parametrize("n", [1, 2, 5, 17, 64])
def test_cholesky_solve_residual(n):
    rng = np.random.default_rng(n)
    for _ in range(20 if n < 64 else 4):
        a = rng.normal(size=(n, n))
        spd = a @ a.T + n * np.eye(n)
        b = rng.normal(size=(n, 3))
        x = cholesky_solve(spd, b)
        assert np.linalg.norm(spd @ x - b) <= 1e-10 * np.linalg.norm(spd) * np.linalg.norm(x)


def test_jacobi_hand_examples():
    vals, _ = sym_eig_jacobi(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert_allclose(vals, [3.0, 1.0], atol=1e-14)
    d = np.diag([2.0, 5.0, -1.0])
    vals, vecs = sym_eig_jacobi(d)
    assert_array_equal(vals, [5.0, 2.0, -1.0])
    assert_array_equal(np.abs(vecs), np.eye(3)[:, [1, 0, 2]])


def test_jacobi_rejects_asymmetric():
    with pytest.raises(SymmetryError):
        sym_eig_jacobi(np.array([[1.0, 2.0], [0.0, 1.0]]))


@pytest.mark.parametrize("n", [2, 3, 8, 31, 64])
def test_jacobi_reconstruction(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(20 if n < 64 else 3):
        a = rng.normal(size=(n, n))
        a = a + a.T
        vals, vecs = sym_eig_jacobi(a)
        scale = np.linalg.norm(a)
        assert np.linalg.norm(vecs @ np.diag(vals) @ vecs.T - a) <= 1e-10 * scale
        assert np.linalg.norm(vecs.T @ vecs - np.eye(n)) <= 1e-10
        assert_allclose(vals, np.sort(np.linalg.eigvalsh(a))[::-1], atol=1e-10 * scale)


def test_backward_sum_and_quadratic(rng):
    w = Tensor(rng.normal(size=5), requires_grad=True)
    with Tape() as tape:
        loss = T.sum(w)
    assert_array_equal(tape_backward(tape, loss)[w], np.ones(5))
    with Tape() as tape:
        loss = T.sum(w * w)
    assert_allclose(tape_backward(tape, loss)[w], 2 * w.data, rtol=1e-15)


def test_backward_accumulates_over_consumers(rng):
    w = Tensor(rng.normal(size=4), requires_grad=True)
    a = rng.normal(size=4)
    with Tape() as tape:
        loss = T.sum(T.tanh(w) * a) + T.sum(w * w)
    g = tape.backward(loss)[w]
    with Tape() as tape:
        first = T.sum(T.tanh(w) * a)
    g1 = tape.backward(first)[w]
    with Tape() as tape:
        second = T.sum(w * w)
    g2 = tape.backward(second)[w]
    assert_allclose(g, g1 + g2, atol=1e-15)


def test_backward_requires_scalar():
    w = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = w * 2.0
    with pytest.raises(ContractError):
        tape.backward(y)


@pytest.mark.parametrize("seed", range(10))
def test_op_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    params = {"a": Tensor(rng.normal(size=(3, 4)), requires_grad=True),
              "b": Tensor(rng.normal(size=(4, 2)), requires_grad=True),
              "c": Tensor(rng.uniform(0.5, 2.0, size=(3, 2)), requires_grad=True)}

    def closure():
        a, b, c = params["a"], params["b"], params["c"]
        h = T.tanh(T.matmul(a, b)) + T.sigmoid(c) * T.log(c)
        z = T.softmax(h, axis=-1) * T.exp(h * 0.3) + T.relu(h) / c
        mu, sd = mean_std_over_time(T.reshape(z, (1, 3, 2)))
        return T.sum(z * z) + T.sum(sd) + T.sum(T.log_softmax(a, axis=0))

    assert grad_check(closure, params, tolerance=1e-4).ok
