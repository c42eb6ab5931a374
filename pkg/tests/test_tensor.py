"""Autodiff core: forward oracles, backward contracts, finite-difference checks."""

import numpy as np
import pytest

from dtlab import tensor as T
from dtlab.tensor import ShapeError, Tensor, no_grad, upcast64
from dtlab.gradcheck import check_gradients, numerical_gradient, relative_error


def t(data, rg=False):
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=rg)


# matmul -----------------------------------------------------------------


def test_matmul_identity():
    out = T.matmul(t([[1, 0], [0, 1]]), t([[2, 3], [4, 5]]))
    np.testing.assert_array_equal(out.data, [[2, 3], [4, 5]])


def test_matmul_hand_dot():
    out = T.matmul(t([[1, 2]]), t([[3], [4]]))
    np.testing.assert_array_equal(out.data, [[11]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        T.matmul(t(np.zeros((2, 3))), t(np.zeros((2, 2))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    a = t(rng.uniform(-1, 1, (3, 4)), rg=True)
    b = t(rng.uniform(-1, 1, (4, 2)), rg=True)
    errs = check_gradients(lambda: T.reduce_sum(T.matmul(a, b)), {"a": a, "b": b})
    assert max(errs.values()) < 1e-3


def test_matmul_batched_broadcast():
    rng = np.random.default_rng(3)
    a = t(rng.uniform(-1, 1, (2, 3, 4)), rg=True)
    b = t(rng.uniform(-1, 1, (4, 5)), rg=True)
    out = T.matmul(a, b)
    np.testing.assert_allclose(out.data, a.data @ b.data, rtol=1e-6)
    errs = check_gradients(lambda: T.reduce_sum(T.mul(T.matmul(a, b), T.matmul(a, b))), {"a": a, "b": b})
    assert max(errs.values()) < 2e-3


# softmax ----------------------------------------------------------------


def test_softmax_equal_logits():
    out = T.softmax(t([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-7)


def test_softmax_saturation_is_stable():
    out = T.softmax(t([1000.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1.0, 0.0, 0.0], atol=1e-6)
    assert np.all(np.isfinite(out.data))


def test_softmax_rows_sum_to_one_and_in_range():
    rng = np.random.default_rng(0)
    for seed in range(5):
        x = np.random.default_rng(seed).uniform(-5, 5, (4, 7)).astype(np.float32)
        out = T.softmax(Tensor(x), axis=-1).data
        np.testing.assert_allclose(out.sum(axis=-1), np.ones(4), atol=1e-6)
        assert np.all(out >= 0) and np.all(out <= 1)


def test_softmax_neg_inf_entries_are_exactly_zero():
    x = np.array([0.5, -np.inf, 1.5, -np.inf], dtype=np.float32)
    out = T.softmax(Tensor(x)).data
    assert out[1] == 0.0 and out[3] == 0.0
    np.testing.assert_allclose(out.sum(), 1.0, atol=1e-6)


def test_softmax_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    x = t(rng.uniform(-1, 1, 5), rg=True)
    w = Tensor(rng.uniform(-1, 1, 5).astype(np.float32))
    errs = check_gradients(lambda: T.reduce_sum(T.mul(T.softmax(x), w)), {"x": x})
    assert errs["x"] < 1e-3


# layernorm ----------------------------------------------------------------


def test_layernorm_constant_row_is_zero():
    out = T.layernorm(t([[3.0, 3.0, 3.0, 3.0]]), t(np.ones(4)), t(np.zeros(4)))
    np.testing.assert_allclose(out.data, np.zeros((1, 4)), atol=1e-5)


def test_layernorm_unit_variance_pair():
    out = T.layernorm(t([1.0, -1.0]), t(np.ones(2)), t(np.zeros(2)))
    np.testing.assert_allclose(out.data, [0.99999500, -0.99999500], atol=1e-6)


def test_layernorm_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    x = t(rng.uniform(-1, 1, (2, 8)), rg=True)
    g = t(rng.uniform(0.5, 1.5, 8), rg=True)
    b = t(rng.uniform(-0.5, 0.5, 8), rg=True)
    w = Tensor(rng.uniform(-1, 1, (2, 8)).astype(np.float32))
    errs = check_gradients(
        lambda: T.reduce_sum(T.mul(T.layernorm(x, g, b), w)), {"x": x, "gain": g, "bias": b}
    )
    assert max(errs.values()) < 1e-3


# losses --------------------------------------------------------------------


def test_mse_of_identical_inputs_is_zero():
    x = t([[1.0, 2.0], [3.0, 4.0]])
    assert T.mse_loss(x, x).item() == 0.0


def test_mse_hand_value():
    assert T.mse_loss(t([1.0, 3.0]), t([0.0, 1.0])).item() == pytest.approx(2.5)


def test_mse_shape_mismatch():
    with pytest.raises(ShapeError):
        T.mse_loss(t([1.0, 2.0]), t([1.0, 2.0, 3.0]))


def test_cross_entropy_uniform_logits_is_ln2():
    loss = T.cross_entropy(t([0.0, 0.0]), [0])
    assert loss.item() == pytest.approx(0.6931471805599453, rel=1e-6)


def test_cross_entropy_out_of_range_is_vocabulary_error():
    with pytest.raises(ValueError, match="vocabulary"):
        T.cross_entropy(t([[0.0, 0.0]]), [5])


def test_cross_entropy_ignore_index_masks_rows():
    logits = t([[2.0, 0.0], [0.0, 2.0]], rg=True)
    full = T.cross_entropy(logits, [0, 0])
    logits2 = t([[2.0, 0.0], [0.0, 2.0]], rg=True)
    masked = T.cross_entropy(logits2, [0, 9], ignore_index=9)
    first_only = T.cross_entropy(t([[2.0, 0.0]]), [0])
    assert masked.item() == pytest.approx(first_only.item(), rel=1e-6)
    assert masked.item() != pytest.approx(full.item())
    masked.backward()
    np.testing.assert_array_equal(logits2.grad[1], [0.0, 0.0])


def test_cross_entropy_all_ignored_raises():
    with pytest.raises(ValueError, match="ignored"):
        T.cross_entropy(t([[0.0, 1.0]]), [3], ignore_index=3)


def test_cross_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    logits = t(rng.uniform(-1, 1, (4, 7)), rg=True)
    targets = rng.integers(0, 7, 4)
    errs = check_gradients(lambda: T.cross_entropy(logits, targets), {"logits": logits})
    assert errs["logits"] < 1e-3


# backward contracts ---------------------------------------------------------


def test_backward_scale_by_constant():
    x = t(2.0, rg=True)
    y = T.mul(x, 3.0)
    y.backward()
    assert x.grad == pytest.approx(3.0)


def test_backward_fanout_accumulates():
    x = t(2.0, rg=True)
    y = T.add(x, x)
    y.backward()
    assert x.grad == pytest.approx(2.0)


def test_backward_shared_subexpression_equals_unshared():
    # loss = (x*y) + (x*y)  vs  loss = x*y + x*y with separate products
    rng = np.random.default_rng(1)
    xv = rng.uniform(-1, 1, 4).astype(np.float32)
    yv = rng.uniform(-1, 1, 4).astype(np.float32)

    x1, y1 = Tensor(xv, requires_grad=True), Tensor(yv, requires_grad=True)
    shared = T.mul(x1, y1)
    T.reduce_sum(T.add(shared, shared)).backward()

    x2, y2 = Tensor(xv, requires_grad=True), Tensor(yv, requires_grad=True)
    T.reduce_sum(T.add(T.mul(x2, y2), T.mul(x2, y2))).backward()

    np.testing.assert_allclose(x1.grad, x2.grad, rtol=1e-6)
    np.testing.assert_allclose(y1.grad, y2.grad, rtol=1e-6)


def test_backward_rejects_non_scalar_root():
    x = t([1.0, 2.0], rg=True)
    with pytest.raises(ValueError, match="scalar"):
        T.add(x, 1.0).backward()


def test_no_grad_suppresses_graph():
    x = t(1.0, rg=True)
    with no_grad():
        y = T.mul(x, 2.0)
    assert not y.requires_grad and y._parents == ()


def test_backward_frees_graph_by_default():
    x = t(1.0, rg=True)
    y = T.mul(x, 2.0)
    z = T.mul(y, 3.0)
    z.backward()
    assert y._parents == () and y._backward is None


# elementwise / movement ------------------------------------------------------


def test_relu_forward():
    out = T.relu(t([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_gelu_matches_scalar_reference():
    xs = [-2.0, -0.5, 0.0, 0.5, 1.0, 2.0]
    want = [
        -0.04540230591222494,
        -0.15428599017485606,
        0.0,
        0.34571400982514394,
        0.8411919906082768,
        1.954597694087775,
    ]
    out = T.gelu(t(xs))
    np.testing.assert_allclose(out.data, want, rtol=1e-6)


def test_take_gathers_and_scatter_adds():
    x = t(np.arange(12).reshape(4, 3), rg=True)
    idx = [1, 1, 3]
    out = T.take(x, idx, axis=0)
    np.testing.assert_array_equal(out.data, x.data[idx])
    T.reduce_sum(out).backward()
    # row 1 used twice -> gradient 2, row 3 once, rows 0/2 untouched
    np.testing.assert_array_equal(x.grad[:, 0], [0.0, 2.0, 0.0, 1.0])


def test_take_axis1():
    x = t(np.arange(12).reshape(3, 4), rg=True)
    out = T.take(x, [2, 0], axis=1)
    np.testing.assert_array_equal(out.data, x.data[:, [2, 0]])
    T.reduce_sum(out).backward()
    np.testing.assert_array_equal(x.grad[0], [1.0, 0.0, 1.0, 0.0])


def test_reduce_mean_axis_keepdims():
    x = t(np.arange(6).reshape(2, 3), rg=True)
    out = T.reduce_mean(x, axis=1, keepdims=True)
    np.testing.assert_allclose(out.data, [[1.0], [4.0]])
    T.reduce_sum(out).backward()
    np.testing.assert_allclose(x.grad, np.full((2, 3), 1 / 3), rtol=1e-6)


def test_reshape_transpose_roundtrip_gradients():
    x = t(np.arange(24).reshape(2, 3, 4), rg=True)
    y = T.transpose(T.reshape(x, (6, 4)), (1, 0))
    T.reduce_sum(T.mul(y, y)).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-6)


def test_stack_forward_backward():
    a = t([1.0, 2.0], rg=True)
    b = t([3.0, 4.0], rg=True)
    out = T.stack([a, b], axis=0)
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])
    T.reduce_sum(T.mul(out, t([[1.0, 2.0], [3.0, 4.0]]))).backward()
    np.testing.assert_array_equal(a.grad, [1.0, 2.0])
    np.testing.assert_array_equal(b.grad, [3.0, 4.0])


def test_dropout_eval_mode_is_identity():
    x = t(np.ones((4, 4)))
    out = T.dropout(x, 0.5, training=False)
    assert out is x


def test_dropout_training_scales_kept_entries():
    rng = np.random.default_rng(0)
    x = t(np.ones((100, 100)))
    out = T.dropout(x, 0.25, rng=rng, training=True)
    vals = np.unique(out.data)
    assert set(np.round(vals, 5)) <= {0.0, np.float32(np.round(1 / 0.75, 5))}
    kept = (out.data != 0).mean()
    assert 0.70 < kept < 0.80


def test_dropout_training_without_rng_raises():
    with pytest.raises(ValueError, match="rng"):
        T.dropout(t(np.ones(3)), 0.5, training=True)


def test_forward_ops_deterministic():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (3, 5)).astype(np.float32)
    a = T.softmax(Tensor(x), axis=-1).data
    b = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_array_equal(a, b)


# oracle plumbing -------------------------------------------------------------


def test_numerical_gradient_on_quadratic():
    x = t([0.3, -0.2], rg=True)
    num = numerical_gradient(lambda: T.reduce_sum(T.mul(x, x)), x)
    np.testing.assert_allclose(num, 2 * x.data.astype(np.float64), rtol=1e-5)


def test_relative_error_scale_floor():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    # tiny gradients compare against the 1e-2 floor, not against zero
    assert relative_error(np.full(3, 1e-6), np.zeros(3)) == pytest.approx(1e-4)


def test_upcast64_context():
    assert Tensor([1.0]).data.dtype == np.float32
    with upcast64():
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32
