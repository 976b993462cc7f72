import numpy as np
import pytest

from sagp import tensor as T
from sagp.errors import DomainError, ShapeError

from conftest import finite_difference, max_rel_err


def test_matmul_identity():
    a = T.constant([[1.0, 0.0], [0.0, 1.0]])
    b = T.constant([[3.0, 4.0], [5.0, 6.0]])
    assert T.matmul(a, b).value.arr.tolist() == [[3.0, 4.0], [5.0, 6.0]]


def test_matmul_dot_product():
    out = T.matmul(T.constant([[1.0, 2.0]]), T.constant([[3.0], [4.0]]))
    assert out.item() == 11.0


def test_matmul_shape_error_reports_both_shapes():
    with pytest.raises(ShapeError) as err:
        T.matmul(T.constant(np.ones((2, 3))), T.constant(np.ones((2, 3))))
    assert "(2, 3)" in str(err.value)


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    a0 = rng.uniform(-2, 2, (3, 3))
    b0 = rng.uniform(-2, 2, (3, 3))

    def loss_of_a(a_arr):
        return float((a_arr @ b0).sum())

    a = T.parameter(a0)
    out = T.reduce("sum", T.matmul(a, T.constant(b0)))
    T.backward(out)
    assert max_rel_err(a.grad, finite_difference(loss_of_a, a0)) < 1e-4


def test_elementwise_mul():
    out = T.elementwise("mul", T.constant([[1.0, 2.0], [3.0, 4.0]]),
                        T.constant([[0.0, 1.0], [1.0, 0.0]]))
    assert out.value.arr.tolist() == [[0.0, 2.0], [3.0, 0.0]]


def test_elementwise_column_broadcast():
    out = T.elementwise("mul", T.constant([[1.0, 1.0], [1.0, 1.0]]),
                        T.constant([[2.0], [3.0]]))
    assert out.value.arr.tolist() == [[2.0, 2.0], [3.0, 3.0]]


def test_elementwise_incompatible_shapes():
    with pytest.raises(ShapeError):
        T.elementwise("add", T.constant(np.ones((2, 3))), T.constant(np.ones((3, 2))))


def test_broadcast_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    a0 = rng.uniform(-2, 2, (4, 3))
    b0 = rng.uniform(-2, 2, (4, 1))

    def loss_of_b(b_arr):
        return float((a0 * b_arr).sum())

    b = T.parameter(b0)
    out = T.reduce("sum", T.elementwise("mul", T.constant(a0), b))
    T.backward(out)
    assert max_rel_err(b.grad, finite_difference(loss_of_b, b0)) < 1e-4


def test_sigmoid_at_zero():
    assert T.activation("sigmoid", T.constant([[0.0]])).item() == 0.5


def test_row_softmax_spot_value():
    out = T.activation("row-softmax", T.constant([[2.0, 0.0]]))
    np.testing.assert_allclose(out.value.arr, [[0.88079708, 0.11920292]], atol=1e-8)


def test_row_softmax_rows_sum_to_one():
    rng = np.random.default_rng(2)
    x = T.constant(rng.uniform(-20, 20, (6, 5)))
    out = T.activation("row-softmax", x).value.arr
    assert (out >= 0).all()
    np.testing.assert_allclose(out.sum(axis=1), np.ones(6), atol=1e-12)


def test_sigmoid_strictly_inside_unit_interval():
    rng = np.random.default_rng(4)
    out = T.activation("sigmoid", T.constant(rng.uniform(-30, 30, (5, 5)))).value.arr
    assert (out > 0).all() and (out < 1).all()


def test_relu_gradient_away_from_kink():
    rng = np.random.default_rng(5)
    x0 = rng.uniform(-2, 2, (4, 4))
    x0[np.abs(x0) < 0.1] = 0.5  # keep clear of the kink

    def loss(arr):
        return float(np.maximum(arr, 0).sum())

    x = T.parameter(x0)
    T.backward(T.reduce("sum", T.activation("relu", x)))
    assert max_rel_err(x.grad, finite_difference(loss, x0)) < 1e-4


def test_log_domain_error():
    with pytest.raises(DomainError):
        T.activation("log", T.constant([[1.0, -1.0]]))


def test_frobenius_and_mean_values():
    assert T.reduce("frobenius-norm", T.constant([[3.0, 4.0]])).item() == 5.0
    assert T.reduce("mean", T.constant([[1.0, 2.0], [3.0, 4.0]])).item() == 2.5


def test_frobenius_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    x0 = rng.uniform(-2, 2, (2, 2))

    def loss(arr):
        return float(np.sqrt((arr * arr).sum()))

    x = T.parameter(x0)
    T.backward(T.reduce("frobenius-norm", x))
    assert max_rel_err(x.grad, finite_difference(loss, x0)) < 1e-4


def test_frobenius_gradient_zero_at_zero_matrix():
    x = T.parameter(np.zeros((2, 2)))
    T.backward(T.reduce("frobenius-norm", x))
    assert (x.grad == 0).all()


def test_backward_sum_gives_ones():
    x = T.parameter(np.arange(4.0).reshape(2, 2))
    T.backward(T.reduce("sum", x))
    assert x.grad.tolist() == [[1.0, 1.0], [1.0, 1.0]]


def test_backward_sigmoid_at_zero_gives_quarter():
    x = T.parameter(np.zeros((2, 2)))
    T.backward(T.reduce("sum", T.activation("sigmoid", x)))
    np.testing.assert_allclose(x.grad, np.full((2, 2), 0.25), atol=1e-15)


def test_backward_requires_scalar_root():
    with pytest.raises(ShapeError):
        T.backward(T.parameter(np.ones((2, 2))))


def test_backward_accumulates_without_reset():
    x = T.parameter(np.ones((2, 2)))
    out = T.reduce("sum", x)
    T.backward(out)
    T.backward(out)
    assert x.grad.tolist() == [[2.0, 2.0], [2.0, 2.0]]


def test_backward_reproducible_after_clear():
    rng = np.random.default_rng(9)
    x0 = rng.uniform(-2, 2, (3, 3))
    x = T.parameter(x0)
    out = T.reduce("frobenius-norm", T.activation("sigmoid", x))
    T.backward(out)
    first = x.grad.copy()
    T.zero_grads([x])
    T.backward(out)
    assert (x.grad == first).all()


def test_transpose_gradient():
    x0 = np.array([[1.0, 2.0], [3.0, 4.0]])
    x = T.parameter(x0)
    weight = np.array([[1.0, 10.0], [100.0, 1000.0]])
    out = T.reduce("sum", T.elementwise("mul", T.transpose(x), T.constant(weight)))
    T.backward(out)
    assert x.grad.tolist() == weight.T.tolist()


def test_clamp_blocks_gradient_outside_range():
    x = T.parameter([[0.5, 2.0, -1.0]])
    T.backward(T.reduce("sum", T.clamp(x, 0.0, 1.0)))
    assert x.grad.tolist() == [[1.0, 0.0, 0.0]]


def test_adam_first_step_moves_by_lr():
    x = T.parameter([[1.0]])
    state = T.OptimizerState([x])
    x.grad[:] = 1.0
    T.adam_step([x], state, 0.01)
    assert abs(x.value.arr[0, 0] - (1.0 - 0.01)) < 1e-9


def test_adam_zero_gradient_leaves_parameter_unchanged():
    x = T.parameter([[1.5]])
    state = T.OptimizerState([x])
    T.adam_step([x], state, 0.01)
    assert x.value.arr[0, 0] == 1.5


def test_adam_converges_on_quadratic():
    x = T.parameter([[0.0]])
    state = T.OptimizerState([x])
    target = T.constant([[3.0]])
    for _ in range(100):
        diff = T.elementwise("sub", x, target)
        loss = T.elementwise("mul", diff, diff)
        T.backward(loss)
        T.adam_step([x], state, 0.1)
        T.zero_grads([x])
    assert abs(x.value.arr[0, 0] - 3.0) < 0.5


def test_optimizer_state_shape_check():
    x = T.parameter(np.ones((2, 2)))
    state = T.OptimizerState([x])
    y = T.parameter(np.ones((3, 3)))
    with pytest.raises(ShapeError):
        T.adam_step([y], state, 0.01)


def test_sgd_step():
    x = T.parameter([[2.0]])
    state = T.OptimizerState([x], kind="sgd")
    x.grad[:] = 0.5
    T.sgd_step([x], state, 0.1)
    assert abs(x.value.arr[0, 0] - 1.95) < 1e-12


def test_matrix_invariants():
    m = T.Matrix([[1.0, 2.0], [3.0, 4.0]])
    assert m.rows == 2 and m.cols == 2
    assert m.data.tolist() == [1.0, 2.0, 3.0, 4.0]
    with pytest.raises(ValueError):
        T.Matrix([[np.inf, 0.0]])
    with pytest.raises(ValueError):
        m.arr[0, 0] = 5.0  # frozen storage


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(21)
        a = T.parameter(rng.uniform(-2, 2, (4, 4)))
        b = T.constant(rng.uniform(-2, 2, (4, 4)))
        out = T.reduce("mean", T.activation("row-softmax", T.matmul(a, b)))
        T.backward(out)
        return out.item(), a.grad.copy()

    v1, g1 = run()
    v2, g2 = run()
    assert v1 == v2
    assert (g1 == g2).all()
