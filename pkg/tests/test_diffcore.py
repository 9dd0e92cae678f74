import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gmss import diffcore as dc
from gmss.errors import ContractError, DimensionError, NumericError


def fd_grad(f, x, eps=1e-6):
    """Central differences of scalar f at array x (oracle)."""
    g = np.zeros_like(x)
    for j in np.ndindex(x.shape):
        old = x[j]
        x[j] = old + eps
        fp = f(x)
        x[j] = old - eps
        fm = f(x)
        x[j] = old
        g[j] = (fp - fm) / (2 * eps)
    return g


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


dims = st.integers(1, 5)


@given(dims, dims, dims, st.integers(0, 2**31))
def test_matmul_matches_triple_loop(n, k, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
    out = dc.matmul(dc.Tensor(a), dc.Tensor(b)).data
    np.testing.assert_allclose(out, naive_matmul(a, b), rtol=1e-12, atol=1e-12)


@given(dims, dims, dims, st.integers(0, 2**31))
def test_matmul_gradients_match_finite_differences(n, k, m, seed):
    rng = np.random.default_rng(seed)
    a = dc.Param(rng.normal(size=(n, k)), "a")
    b = dc.Param(rng.normal(size=(k, m)), "b")
    w = rng.normal(size=(n, m))
    dc.backward(dc.sum(dc.mul(a @ b, dc.Tensor(w))))
    f = lambda x: float(np.sum(naive_matmul(x, b.data) * w))
    np.testing.assert_allclose(a.grad, fd_grad(f, a.data.copy()), rtol=1e-6, atol=1e-8)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        dc.matmul(dc.Tensor(np.ones((2, 3))), dc.Tensor(np.ones((2, 3))))


def test_broadcast_add_reduces_gradient():
    a = dc.Param(np.ones((3, 4)), "a")
    b = dc.Param(np.ones((1, 4)), "b")
    dc.backward(dc.sum(a + b))
    np.testing.assert_array_equal(b.grad, np.full((1, 4), 3.0))
    np.testing.assert_array_equal(a.grad, np.ones((3, 4)))


def test_shared_node_accumulates():
    x = dc.Param(np.array([[3.0]]), "x")
    dc.backward(dc.mul(x, x))
    assert x.grad[0, 0] == 6.0


def test_diamond_graph():
    # y = (x + x*x) * x ; dy/dx = 1*2x + 3x^2 ... at x=2: 2*2 + 3*4 = 16
    x = dc.Param(np.array([[2.0]]), "x")
    dc.backward(dc.mul(x + dc.mul(x, x), x))
    assert x.grad[0, 0] == pytest.approx(16.0, abs=1e-14)


def test_backward_needs_scalar():
    with pytest.raises(ContractError):
        dc.backward(dc.Param(np.ones((2, 2)), "x"))


def test_log_of_nonpositive_raises():
    with pytest.raises(NumericError):
        dc.log(dc.Tensor(np.array([[1.0, 0.0]])))


def test_nonfinite_tensor_raises():
    with pytest.raises(NumericError):
        dc.Tensor(np.array([np.nan]))
    with pytest.raises(NumericError):
        dc.exp(dc.Tensor(np.array([[1000.0]])))


def test_l2_normalize_zero_row_raises():
    with pytest.raises(NumericError):
        dc.l2_normalize(dc.Tensor(np.zeros((2, 3))))


def test_no_grad_builds_no_graph():
    x = dc.Param(np.ones((2, 2)), "x")
    with dc.no_grad():
        y = dc.sum(dc.mul(x, x))
    assert y._parents == ()


@given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 2**31))
def test_softmax_rows_sum_to_one(n, k, seed):
    x = np.random.default_rng(seed).normal(scale=10, size=(n, k))
    p = dc.softmax(dc.Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-12)
    assert np.all(p >= 0)


def test_cross_entropy_uniform_logits_is_log_k():
    for k in (2, 7, 128):
        loss = dc.cross_entropy(dc.Tensor(np.zeros((5, k))), np.arange(5) % k)
        assert abs(loss.item() - math.log(k)) < 1e-12


def test_cross_entropy_index_and_onehot_agree(rng):
    logits = rng.normal(size=(6, 4))
    y = rng.integers(4, size=6)
    a = dc.cross_entropy(dc.Tensor(logits), y).item()
    b = dc.cross_entropy(dc.Tensor(logits), np.eye(4)[y]).item()
    assert a == pytest.approx(b, abs=1e-14)


@pytest.mark.parametrize("op", ["exp", "softmax", "l2_normalize", "relu"])
def test_unary_gradients(op, rng):
    x0 = rng.normal(size=(3, 4))
    x0 = np.where(np.abs(x0) < 0.05, 0.3, x0)
    w = rng.normal(size=(3, 4))
    fn = getattr(dc, op)
    x = dc.Param(x0.copy(), "x")
    dc.backward(dc.sum(dc.mul(fn(x), dc.Tensor(w))))
    f = lambda v: float(np.sum(fn(dc.Tensor(v)).data * w))
    np.testing.assert_allclose(x.grad, fd_grad(f, x0.copy()), rtol=1e-6, atol=1e-8)


def test_cross_entropy_gradient(rng):
    logits0 = rng.normal(size=(4, 5))
    y = np.array([0, 4, 2, 2])
    x = dc.Param(logits0.copy(), "x")
    dc.backward(dc.cross_entropy(x, y))
    f = lambda v: dc.cross_entropy(dc.Tensor(v), y).item()
    np.testing.assert_allclose(x.grad, fd_grad(f, logits0.copy()), rtol=1e-6, atol=1e-9)


def test_grad_check_catches_injected_fault(rng):
    x = dc.Param(rng.normal(size=(3, 3)) + 0.1, "x")
    w = rng.normal(size=(3, 3))
    fn = lambda: dc.sum(dc.mul(dc.relu(x), dc.Tensor(w)))
    assert dc.grad_check(fn, [x]).passed
    with dc.inject_fault("relu"):
        rep = dc.grad_check(fn, [x])
    assert not rep.passed
    assert rep.max_rel_error["x"] > 0.1


def test_grad_check_report_dict(rng):
    p = dc.Param(rng.normal(size=(2, 2)), "p")
    d = dc.grad_check(lambda: dc.sum(dc.mul(p, p)), [p]).to_dict()
    assert set(d["params"]["p"]) == {"max_rel_error", "entries_checked", "step_reduced"}
    assert d["params"]["p"]["entries_checked"] == 4


def test_grad_check_shrinks_step_at_kink():
    # a unit 1e-5 from its kink: a 1e-4 step straddles it, the guard must shrink
    x = dc.Param(np.array([[1e-5, 1.0]]), "x")
    rep = dc.grad_check(lambda: dc.sum(dc.relu(x)), [x], eps=1e-4)
    assert rep.passed
    assert rep.reduced["x"] == 1


def test_rel_error_floor():
    assert dc.rel_error(0.0, 0.0) == 0.0
    assert dc.rel_error(1e-10, 0.0) == pytest.approx(1e-2)
    assert dc.rel_error(2.0, 1.0) == 0.5
