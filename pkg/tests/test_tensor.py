import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gameon import tensor as T
from gameon.errors import ContractError, DimensionError, StructuralError
from gameon.tensor import Tape, Tensor

from conftest import central_difference


def t64(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


def tape_grad(build, *tensors):
    """Run build() under a tape, backprop from its scalar output, and
    return the grads of the given tensors."""
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        out = build()
        tape.backward(out)
    return [t.grad for t in tensors]


# --------------------------------------------------------------------------
# matmul

def test_matmul_identity():
    eye = t64(np.eye(2))
    m = t64([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(eye, m).data, m.data)


def test_matmul_hand_product():
    a = t64([[1.0, 2.0]])
    b = t64([[3.0], [4.0]])
    assert np.array_equal(T.matmul(a, b).data, [[11.0]])


def test_matmul_backward_of_sum(rng):
    a = t64(rng.standard_normal((3, 4)), requires_grad=True)
    b = t64(rng.standard_normal((4, 2)), requires_grad=True)
    (ga, gb) = tape_grad(lambda: T.sum_all(T.matmul(a, b)), a, b)
    assert np.allclose(ga, np.ones((3, 2)) @ b.data.T)
    assert np.allclose(gb, a.data.T @ np.ones((3, 2)))
    num = central_difference(lambda x: (x @ b.data).sum(), a.data.copy())
    assert np.abs(ga - num).max() < 1e-8


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        T.matmul(t64(np.zeros((2, 3))), t64(np.zeros((2, 2))))


def test_matmul_vector_right_operand(rng):
    a = t64(rng.standard_normal((3, 4)), requires_grad=True)
    v = t64(rng.standard_normal(4), requires_grad=True)
    (ga, gv) = tape_grad(lambda: T.sum_all(T.matmul(a, v)), a, v)
    assert np.allclose(ga, np.outer(np.ones(3), v.data))
    assert np.allclose(gv, a.data.sum(axis=0))


# --------------------------------------------------------------------------
# nonlinearities

def test_elu_closed_forms():
    x = t64([0.0, 2.0, -1.0])
    out = T.elu(x).data
    assert out[0] == 0.0
    assert out[1] == 2.0
    assert abs(out[2] - (math.exp(-1) - 1)) < 1e-9
    assert abs(out[2] + 0.632121) < 1e-6


def test_elu_backward_matches_finite_differences(rng):
    x = t64(rng.standard_normal(20), requires_grad=True)
    (g,) = tape_grad(lambda: T.sum_all(T.elu(x)), x)
    num = central_difference(lambda v: np.where(v > 0, v, np.expm1(v)).sum(), x.data.copy())
    assert np.abs(g - num).max() < 1e-8


def test_elu_large_positive_no_overflow():
    out = T.elu(t64([700.0])).data
    assert out[0] == 700.0 and np.isfinite(out).all()


def test_leaky_relu_closed_forms():
    x = t64([3.0, -5.0, 0.0])
    out = T.leaky_relu(x, 0.2).data
    assert np.allclose(out, [3.0, -1.0, 0.0])


def test_leaky_relu_slope_validated():
    with pytest.raises(ContractError):
        T.leaky_relu(t64([1.0]), 1.5)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-50, 50),
    st.floats(-50, 50),
    st.floats(0.01, 0.99),
)
def test_elu_and_leaky_relu_monotone(x, y, slope):
    lo, hi = sorted([x, y])
    pair = t64([lo, hi])
    e = T.elu(pair).data
    l = T.leaky_relu(pair, slope).data
    assert e[0] <= e[1]
    assert l[0] <= l[1]


def test_relu_and_clamp_and_log(rng):
    x = t64([-1.0, 0.5, 2.0], requires_grad=True)
    (g,) = tape_grad(lambda: T.sum_all(T.relu(x)), x)
    assert np.allclose(g, [0.0, 1.0, 1.0])
    c = T.clamp(t64([0.0, 0.5, 2.0]), 0.1, 1.0)
    assert np.allclose(c.data, [0.1, 0.5, 1.0])
    y = t64([0.25, 1.0], requires_grad=True)
    (gl,) = tape_grad(lambda: T.sum_all(T.log(y)), y)
    assert np.allclose(gl, [4.0, 1.0])


def test_clamp_zero_gradient_outside_range():
    x = t64([0.0, 0.5, 2.0], requires_grad=True)
    (g,) = tape_grad(lambda: T.sum_all(T.clamp(x, 0.1, 1.0)), x)
    assert np.allclose(g, [0.0, 1.0, 0.0])


# --------------------------------------------------------------------------
# segment softmax

def test_segment_softmax_uniform_scores():
    out = T.segment_softmax(t64([7.0, 7.0, 7.0]), np.zeros(3, dtype=int), 1)
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3])


def test_segment_softmax_single_edge_segment():
    out = T.segment_softmax(t64([-123.0]), np.zeros(1, dtype=int), 1)
    assert np.allclose(out.data, [1.0])


def test_segment_softmax_closed_form():
    out = T.segment_softmax(t64([0.0, math.log(2.0)]), np.zeros(2, dtype=int), 1)
    assert np.allclose(out.data, [1 / 3, 2 / 3])


def test_segment_softmax_empty_segment_rejected():
    with pytest.raises(StructuralError, match="no incoming edges"):
        T.segment_softmax(t64([1.0, 2.0]), np.array([0, 2]), 3)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_segment_softmax_sums_and_shift_invariance(data):
    n_seg = data.draw(st.integers(1, 4))
    seg = data.draw(
        st.lists(st.integers(0, n_seg - 1), min_size=n_seg, max_size=20).filter(
            lambda s: set(s) == set(range(n_seg))
        )
    )
    scores = data.draw(
        st.lists(st.floats(-30, 30), min_size=len(seg), max_size=len(seg))
    )
    shift = data.draw(st.floats(-100, 100))
    seg_arr = np.array(seg)
    out = T.segment_softmax(t64(scores), seg_arr, n_seg).data
    assert (out >= 0).all()
    sums = np.zeros(n_seg)
    np.add.at(sums, seg_arr, out)
    assert np.abs(sums - 1.0).max() < 1e-12
    shifted = T.segment_softmax(t64(np.array(scores) + shift), seg_arr, n_seg).data
    assert np.abs(out - shifted).max() < 1e-6


def test_segment_softmax_backward_matches_finite_differences(rng):
    seg = np.array([0, 0, 1, 1, 1, 2])
    x = t64(rng.standard_normal(6), requires_grad=True)
    w = rng.standard_normal(6)  # weight the outputs so the Jacobian is exercised

    def build():
        return T.sum_all(T.mul(T.segment_softmax(x, seg, 3), t64(w)))

    (g,) = tape_grad(build, x)

    def numeric(v):
        out = np.empty(6)
        for s in range(3):
            m = seg == s
            e = np.exp(v[m] - v[m].max())
            out[m] = e / e.sum()
        return (out * w).sum()

    num = central_difference(numeric, x.data.copy())
    assert np.abs(g - num).max() < 1e-8


# --------------------------------------------------------------------------
# segment sum / mean, gather, pick

def test_segment_sum_and_mean(rng):
    x = t64(rng.standard_normal((5, 3)), requires_grad=True)
    seg = np.array([0, 0, 1, 1, 1])
    s = T.segment_sum(x, seg, 2)
    assert np.allclose(s.data[0], x.data[:2].sum(axis=0))
    m = T.segment_mean(x, seg, 2)
    assert np.allclose(m.data[1], x.data[2:].mean(axis=0))
    (g,) = tape_grad(lambda: T.sum_all(T.segment_mean(x, seg, 2)), x)
    assert np.allclose(g[0], np.full(3, 1 / 2))
    assert np.allclose(g[4], np.full(3, 1 / 3))


def test_segment_mean_empty_segment_rejected():
    with pytest.raises(StructuralError):
        T.segment_mean(t64(np.ones((2, 2))), np.array([0, 0]), 2)


def test_gather_rows_backward_scatter_adds(rng):
    x = t64(rng.standard_normal((3, 2)), requires_grad=True)
    idx = np.array([0, 0, 2])
    (g,) = tape_grad(lambda: T.sum_all(T.gather_rows(x, idx)), x)
    assert np.allclose(g, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_pick_per_row(rng):
    x = t64(rng.standard_normal((3, 2)), requires_grad=True)
    cols = np.array([1, 0, 1])
    out = T.pick_per_row(x, cols)
    assert np.allclose(out.data, x.data[np.arange(3), cols])
    (g,) = tape_grad(lambda: T.sum_all(T.pick_per_row(x, cols)), x)
    expect = np.zeros((3, 2))
    expect[np.arange(3), cols] = 1.0
    assert np.allclose(g, expect)


def test_concat_cols_and_slice_vec_backward(rng):
    a = t64(rng.standard_normal((2, 2)), requires_grad=True)
    b = t64(rng.standard_normal((2, 3)), requires_grad=True)
    w = rng.standard_normal((2, 5))
    (ga, gb) = tape_grad(lambda: T.sum_all(T.mul(T.concat_cols(a, b), t64(w))), a, b)
    assert np.allclose(ga, w[:, :2])
    assert np.allclose(gb, w[:, 2:])
    v = t64(rng.standard_normal(6), requires_grad=True)
    (gv,) = tape_grad(lambda: T.sum_all(T.slice_vec(v, 2, 5)), v)
    assert np.allclose(gv, [0, 0, 1, 1, 1, 0])


def test_softmax_rows_backward(rng):
    x = t64(rng.standard_normal((4, 3)), requires_grad=True)
    w = rng.standard_normal((4, 3))
    (g,) = tape_grad(lambda: T.sum_all(T.mul(T.softmax_rows(x), t64(w))), x)

    def numeric(v):
        e = np.exp(v - v.max(axis=1, keepdims=True))
        return (e / e.sum(axis=1, keepdims=True) * w).sum()

    num = central_difference(numeric, x.data.copy())
    assert np.abs(g - num).max() < 1e-8


# --------------------------------------------------------------------------
# dropout

def test_dropout_rate_zero_is_bit_exact_identity(rng):
    x = t64(rng.standard_normal(16))
    assert T.dropout(x, 0.0, True, np.random.default_rng(0)) is x


def test_dropout_eval_is_bit_exact_identity(rng):
    x = t64(rng.standard_normal(16))
    assert T.dropout(x, 0.9, False) is x


def test_dropout_preserves_mean_within_three_sigma():
    x = Tensor(np.ones(100_000, dtype=np.float64))
    out = T.dropout(x, 0.4, True, np.random.default_rng(7)).data
    # survivors have value 1/0.6; per-element variance (1-p)/p = 2/3
    sigma_mean = math.sqrt((0.4 / 0.6) / 100_000)
    assert abs(out.mean() - 1.0) < 3 * sigma_mean


def test_dropout_backward_uses_same_mask(rng):
    x = t64(rng.standard_normal(50), requires_grad=True)
    for t in (x,):
        t.grad = None
    with Tape() as tape:
        out = T.dropout(x, 0.4, True, np.random.default_rng(3))
        tape.backward(T.sum_all(out))
    mask = out.data / x.data  # 0 or 1/(1-rate)
    assert np.allclose(x.grad, mask)


def test_dropout_requires_generator_in_training():
    with pytest.raises(ContractError):
        T.dropout(t64([1.0]), 0.5, True, None)


# --------------------------------------------------------------------------
# tape and backward

def test_backward_sum_gives_ones():
    x = t64([1.0, 2.0, 3.0], requires_grad=True)
    (g,) = tape_grad(lambda: T.sum_all(x), x)
    assert np.array_equal(g, np.ones(3))


def test_backward_square_closed_form():
    x = t64([1.0, 2.0], requires_grad=True)
    (g,) = tape_grad(lambda: T.sum_all(T.mul(x, x)), x)
    assert np.allclose(g, [2.0, 4.0])


def test_backward_accumulates_across_fanout():
    x = t64([3.0], requires_grad=True)
    (g,) = tape_grad(lambda: T.sum_all(T.add(x, x)), x)
    assert np.allclose(g, [2.0])


def test_backward_rejects_non_scalar_loss():
    x = t64([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        out = T.mul(x, x)
        with pytest.raises(ContractError):
            tape.backward(out)


def test_no_recording_without_tape():
    x = t64([1.0], requires_grad=True)
    out = T.mul(x, x)
    assert out.requires_grad is False


def test_rank_three_rejected():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((2, 2, 2)))


def test_mixed_dtype_rejected():
    a = Tensor(np.ones(2, dtype=np.float32))
    b = Tensor(np.ones(2, dtype=np.float64))
    with pytest.raises(ContractError):
        T.add(a, b)


# --------------------------------------------------------------------------
# grad_check

def test_grad_check_quadratic():
    x = t64([3.0], requires_grad=True)
    err = T.grad_check(lambda: T.sum_all(T.mul(x, x)), [x], eps=1e-5)
    assert err < 1e-8


def test_grad_check_elu_at_negative_point():
    x = t64([-0.5], requires_grad=True)
    err = T.grad_check(lambda: T.sum_all(T.elu(x)), [x], eps=1e-5)
    assert err < 1e-6


def test_grad_check_requires_float64():
    x = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(ContractError):
        T.grad_check(lambda: T.sum_all(x), [x])


def test_grad_check_every_operation_composed():
    # one scalar function that routes through every op with a backward
    # rule; inputs keep values away from the relu/leaky kinks so central
    # differences stay valid
    rng = np.random.default_rng(99)
    a = t64(rng.uniform(0.1, 1.0, (3, 4)) * rng.choice([-1, 1], (3, 4)), requires_grad=True)
    b = t64(rng.uniform(0.1, 1.0, (4, 3)) * rng.choice([-1, 1], (4, 3)), requires_grad=True)
    bias = t64(rng.uniform(0.2, 0.6, 3), requires_grad=True)
    vec = t64(rng.uniform(0.2, 0.9, 6), requires_grad=True)
    seg = np.array([0, 0, 1])
    idx = np.array([0, 2, 2])

    def f():
        m = T.matmul(a, b)                      # (3, 3)
        m = T.add_bias(m, bias)
        m = T.add(m, T.scale(m, 0.5))
        m = T.mul(m, m)
        m = T.scale_rows(m, T.slice_vec(vec, 0, 3))
        m = T.concat_cols(m, T.relu(m))         # (3, 6)
        m = T.reshape(m, (6, 3))
        m = T.gather_rows(m, np.array([0, 3, 5]))
        m = T.elu(T.leaky_relu(m, 0.3))
        sm = T.softmax_rows(m)
        picked = T.log(T.clamp(T.pick_per_row(sm, np.array([0, 2, 1])), 1e-7, 1 - 1e-7))
        e = T.matmul(m, T.slice_vec(vec, 3, 6))  # (3,)
        att = T.segment_softmax(e, seg, 2)
        pooled = T.segment_mean(T.segment_sum(T.scale_rows(m, T.gather_rows(att, idx)), seg, 2), np.array([0, 0]), 1)
        return T.add(T.sum_all(pooled), T.sum_all(picked))

    err = T.grad_check(f, [a, b, bias, vec], eps=1e-5)
    assert err < 1e-4


def test_grad_check_detects_wrong_gradient(monkeypatch):
    # corrupt the elu backward rule and make sure the checker notices
    real_elu = T.elu

    def bad_elu(x, alpha=1.0):
        out = real_elu(x, alpha)
        tape = T.active_tape()
        if tape is not None and tape._records and tape._records[-1][0] is out:
            orig = tape._records[-1][1]
            tape._records[-1] = (out, lambda g: orig(g * 2.0))
        return out

    monkeypatch.setattr(T, "elu", bad_elu)
    x = t64([0.7], requires_grad=True)
    err = T.grad_check(lambda: T.sum_all(T.elu(x)), [x], eps=1e-5)
    assert err > 1e-2
