import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from artrack import tensor as T
from artrack.gradsuite import CASES, run_case
from artrack.tensor import Tape, Tensor, backward, finite_diff_check, parameter

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def matrices(rows=st.integers(1, 5), cols=st.integers(1, 5)):
    return st.tuples(rows, cols).flatmap(lambda s: arrays(np.float64, s, elements=finite))


# -- matmul ---------------------------------------------------------------


def test_matmul_identity():
    a = Tensor([[1, 2], [3, 4]])
    np.testing.assert_array_equal((a @ Tensor(np.eye(2))).data, [[1, 2], [3, 4]])


def test_matmul_hand_arithmetic():
    out = Tensor([[1, 2], [3, 4]]) @ Tensor([[5], [6]])
    np.testing.assert_array_equal(out.data, [[17], [39]])


def test_matmul_associative():
    rng = np.random.default_rng(0)
    a, b, c = (Tensor(rng.standard_normal(s)) for s in [(4, 3), (3, 5), (5, 2)])
    np.testing.assert_allclose(((a @ b) @ c).data, (a @ (b @ c)).data, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError, match="inner"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_matmul_backward_rule():
    rng = np.random.default_rng(1)
    a, b = parameter(rng.standard_normal((3, 4))), parameter(rng.standard_normal((4, 2)))
    g = rng.standard_normal((3, 2))
    backward(T.sum((a @ b) * Tensor(g)))
    np.testing.assert_allclose(a.grad, g @ b.data.T, atol=1e-12)
    np.testing.assert_allclose(b.grad, a.data.T @ g, atol=1e-12)


# -- softmax ----------------------------------------------------------------


def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)


def test_softmax_analytic():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, math.log(3.0)])).data, [0.25, 0.75], atol=1e-15)


def test_softmax_large_inputs_stay_finite():
    out = T.softmax(Tensor([1000.0, 1000.0, -1000.0])).data
    np.testing.assert_allclose(out, [0.5, 0.5, 0.0], atol=1e-15)


@given(matrices(), st.floats(-50, 50))
def test_softmax_shift_invariant_and_normalized(x, c):
    s = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(T.softmax(Tensor(x + c), axis=-1).data, s, atol=1e-12)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all((s >= 0) & (s <= 1))


def test_softmax_entries_strictly_inside_unit_interval():
    s = T.softmax(Tensor(np.random.default_rng(2).standard_normal((4, 6))), axis=1).data
    assert np.all((s > 0) & (s < 1))


# -- layer norm -------------------------------------------------------------


def test_layer_norm_constant_row_is_zero():
    out = T.layer_norm(Tensor(np.full((1, 4), 3.7)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, np.zeros((1, 4)))


def test_layer_norm_matches_formula():
    rng = np.random.default_rng(3)
    x, g, b = rng.standard_normal((3, 4)), rng.standard_normal(4), rng.standard_normal(4)
    out = T.layer_norm(Tensor(x), Tensor(g), Tensor(b), eps=1e-5).data
    for i in range(3):
        mu = sum(x[i]) / 4
        var = sum((v - mu) ** 2 for v in x[i]) / 4
        expect = [g[c] * (x[i, c] - mu) / math.sqrt(var + 1e-5) + b[c] for c in range(4)]
        np.testing.assert_allclose(out[i], expect, atol=1e-12)


@given(matrices(cols=st.integers(2, 6)))
def test_layer_norm_pre_affine_mean_zero(x):
    c = x.shape[1]
    out = T.layer_norm(Tensor(x), Tensor(np.ones(c)), Tensor(np.zeros(c))).data
    assert np.all(np.abs(out.mean(axis=1)) < 1e-12)


# -- backward semantics -----------------------------------------------------


def test_grad_of_sum_is_ones():
    x = parameter(np.arange(6.0).reshape(2, 3))
    backward(T.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_grad_of_product_is_other_factor():
    x, y = parameter([1.0, -2.0, 3.0]), Tensor([4.0, 5.0, -6.0])
    backward(T.sum(x * y))
    np.testing.assert_array_equal(x.grad, y.data)


def test_fan_out_accumulates():
    x = parameter(1.5)
    backward(x + x)
    assert x.grad == pytest.approx(2.0)


def test_non_participating_param_gets_zero():
    x, unused = parameter([1.0, 2.0]), parameter([[3.0]])
    gx, gu = backward(T.sum(x * x), [x, unused])
    np.testing.assert_array_equal(gx, [2.0, 4.0])
    np.testing.assert_array_equal(gu, [[0.0]])


def test_constant_tensor_never_receives_gradient():
    c, x = Tensor([1.0, 2.0]), parameter([3.0, 4.0])
    backward(T.sum(c * x))
    assert c.grad is None


def test_backward_rejects_non_scalar():
    with pytest.raises(ValueError, match="scalar"):
        backward(parameter([1.0, 2.0]) * 2.0)


def test_gradients_accumulate_across_calls():
    x = parameter([1.0])
    backward(T.sum(x * 3.0))
    backward(T.sum(x * 3.0))
    np.testing.assert_array_equal(x.grad, [6.0])


def test_broadcast_gradient_is_summed_back():
    row = parameter(np.zeros((1, 3)))
    backward(T.sum(Tensor(np.ones((4, 3))) + row))
    np.testing.assert_array_equal(row.grad, [[4.0, 4.0, 4.0]])


def test_tape_is_topological_and_visits_each_node_once():
    rng = np.random.default_rng(4)
    x = parameter(rng.standard_normal((3, 3)))
    h = T.tanh(x @ x)
    out = T.sum(h * h + h)
    tape = Tape.from_output(out)
    assert tape.is_topological()
    ids = [e.node.id for e in tape.entries]
    assert len(ids) == len(set(ids))
    assert [e.node.op for e in tape.entries] == ["matmul", "tanh", "mul", "add", "sum"]


def test_no_tape_without_trainable_inputs():
    out = Tensor([1.0]) * Tensor([2.0])
    assert out.node is None and not out.requires_grad


# -- l2 normalize, conv1d -----------------------------------------------------


@given(matrices(cols=st.integers(1, 6)))
def test_l2_normalize_unit_rows(x):
    out = T.l2_normalize(Tensor(x), axis=1).data
    norms = np.linalg.norm(x, axis=1)
    for row, n in zip(out, norms):
        if n > 1e-6:
            assert abs(np.linalg.norm(row) - 1.0) < 1e-12


def test_l2_normalize_zero_row_passes_through():
    x = parameter(np.array([[0.0, 0.0], [3.0, 4.0]]))
    out = T.l2_normalize(x, axis=1)
    np.testing.assert_allclose(out.data, [[0, 0], [0.6, 0.8]], atol=1e-15)
    backward(T.sum(out))
    assert np.all(np.isfinite(x.grad))


def test_conv1d_zero_padding_matches_loop():
    rng = np.random.default_rng(5)
    x, w = rng.standard_normal((6, 2)), rng.standard_normal((2, 3))
    out = T.conv1d(Tensor(x), Tensor(w), "zeros").data
    for t in range(6):
        for c in range(2):
            expect = sum(w[c, d] * x[t + d - 1, c] for d in range(3) if 0 <= t + d - 1 < 6)
            assert out[t, c] == pytest.approx(expect, abs=1e-12)


def test_conv1d_circular_wraps():
    x = np.arange(4.0).reshape(4, 1)
    out = T.conv1d(Tensor(x), Tensor([[1.0, 0.0, 0.0]]), "circular").data
    np.testing.assert_array_equal(out.ravel(), [3.0, 0.0, 1.0, 2.0])


def test_conv1d_rejects_even_width():
    with pytest.raises(ValueError, match="odd"):
        T.conv1d(Tensor(np.ones((4, 1))), Tensor(np.ones((1, 2))))


# -- finite differences -------------------------------------------------------


def test_finite_diff_square():
    x = parameter(3.0)
    report = finite_diff_check(lambda: x * x, [x])
    assert report.numeric[0] == pytest.approx(6.0, abs=1e-8)
    assert report.passed()


def test_finite_diff_names_bad_coordinate():
    x = parameter([1.0, 1e-6], name="x")
    with pytest.raises(FloatingPointError, match=r"x\[1\]"):
        finite_diff_check(lambda: T.sum(T.log(x)), [x])


def test_finite_diff_restores_state():
    x = parameter([0.3, -0.7])
    before = x.data.copy()
    x.grad = np.array([9.0, 9.0])
    finite_diff_check(lambda: T.sum(T.exp(x)), [x])
    np.testing.assert_array_equal(x.data, before)
    np.testing.assert_array_equal(x.grad, [9.0, 9.0])


def test_relative_error_floor():
    assert T.relative_error(0.0, 0.0) == 0.0
    assert T.relative_error(1e-12, 0.0) == pytest.approx(1e-4)


@pytest.mark.parametrize("name", list(CASES))
def test_gradient_case_first_seed(name):
    assert run_case(name, 0).max_rel_error < 1e-4


def test_fault_injection_is_detected_and_cleared():
    with T.inject_gradient_fault("tanh"):
        assert run_case("tanh", 0).max_rel_error > 0.1
    assert run_case("tanh", 0).max_rel_error < 1e-4


def test_fault_injection_rejects_unknown_op():
    with pytest.raises(ValueError):
        with T.inject_gradient_fault("nope"):
            pass
