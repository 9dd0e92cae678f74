import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gmss import diffcore as dc
from gmss.errors import ConfigError, ContractError, DimensionError
from gmss.graph import (ChebFilter, build_laplacian, cheb_conv, cheb_polynomials, graph_from_edges,
                        load_montage, max_eigenvalue, scale_laplacian, scaled_laplacian)


def path_graph(n):
    return graph_from_edges([f"e{i}" for i in range(n)], np.zeros((n, 2)), [(i, i + 1) for i in range(n - 1)])


@st.composite
def connected_adjacency(draw):
    n = draw(st.integers(2, 9))
    seed = draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    A = np.zeros((n, n))
    for i in range(1, n):  # random spanning tree keeps it connected
        j = int(rng.integers(i))
        A[i, j] = A[j, i] = rng.uniform(0.1, 2.0)
    extra = rng.random((n, n)) < 0.3
    W = np.triu(np.where(extra, rng.uniform(0.1, 2.0, (n, n)), 0.0), 1)
    A = np.maximum(A, W + W.T)
    return A


def test_path_laplacian_by_hand():
    L = build_laplacian(path_graph(3))
    np.testing.assert_array_equal(L, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])


def test_laplacian_rejects_bad_adjacency():
    with pytest.raises(ContractError):
        build_laplacian(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ContractError):
        build_laplacian(np.array([[0.0, -1.0], [-1.0, 0.0]]))
    with pytest.raises(ContractError):
        build_laplacian(np.array([[1.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(DimensionError):
        build_laplacian(np.ones((2, 3)))


@given(connected_adjacency())
def test_laplacian_rows_sum_to_zero_and_psd(A):
    L = build_laplacian(A)
    np.testing.assert_allclose(L.sum(axis=1), 0.0, atol=1e-12)
    assert np.linalg.eigvalsh(L).min() > -1e-10


@given(connected_adjacency())
def test_power_iteration_matches_eigvalsh(A):
    L = build_laplacian(A)
    lam = max_eigenvalue(L)
    assert lam == pytest.approx(np.linalg.eigvalsh(L).max(), rel=1e-8)


def test_zero_laplacian_has_zero_lambda():
    assert max_eigenvalue(np.zeros((3, 3))) == 0.0
    with pytest.raises(ContractError):
        scale_laplacian(np.zeros((3, 3)), 0.0)


@given(connected_adjacency())
def test_scaled_spectrum_in_unit_interval(A):
    SL = scale_laplacian(build_laplacian(A), max_eigenvalue(build_laplacian(A)))
    ev = np.linalg.eigvalsh(SL.Ltilde)
    assert ev.min() >= -1 - 1e-9 and ev.max() <= 1 + 1e-9


@given(connected_adjacency(), st.integers(1, 6))
def test_chebyshev_recurrence_matches_cosine_form(A, K):
    # T_k(Lt) = U diag(cos(k arccos lambda)) U^T on the eigenbasis
    L = build_laplacian(A)
    SL = scale_laplacian(L, max_eigenvalue(L))
    lam, U = np.linalg.eigh(SL.Ltilde)
    theta = np.arccos(np.clip(lam, -1, 1))
    for k, T in enumerate(cheb_polynomials(SL.Ltilde, K)):
        np.testing.assert_allclose(T, (U * np.cos(k * theta)) @ U.T, atol=1e-8)


def test_cheb_order_must_be_positive():
    with pytest.raises(ContractError):
        cheb_polynomials(np.eye(2), 0)


def test_montage_shape(montage):
    assert montage.n == 62
    assert montage.is_connected()
    assert len(set(montage.names)) == 62
    assert montage.names[0] == "FP1" and montage.names[-1] == "CB2"
    np.testing.assert_array_equal(montage.adjacency, montage.adjacency.T)


def test_montage_rejects_duplicates_and_disconnection(tmp_path):
    doc = {"electrodes": [{"name": "A", "x": 0, "y": 0}, {"name": "A", "x": 1, "y": 0}], "edges": [[0, 1]]}
    (tmp_path / "dup.json").write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match="A"):
        load_montage(tmp_path / "dup.json")
    doc = {"electrodes": [{"name": "A", "x": 0, "y": 0}, {"name": "B", "x": 1, "y": 0}], "edges": []}
    (tmp_path / "split.json").write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_montage(tmp_path / "split.json")


def cheb_conv_loops(X, Ts, betas):
    n, d_in = X.shape
    d_out = betas[0].shape[1]
    out = np.zeros((n, d_out))
    for T, B in zip(Ts, betas):
        TX = np.zeros((n, d_in))
        for i in range(n):
            for j in range(n):
                TX[i] += T[i, j] * X[j]
        for i in range(n):
            for o in range(d_out):
                out[i, o] += sum(TX[i, c] * B[c, o] for c in range(d_in))
    return np.maximum(out, 0.0)


@given(st.integers(1, 4), st.integers(0, 2**31))
def test_cheb_conv_matches_loops(K, seed):
    rng = np.random.default_rng(seed)
    g = path_graph(5)
    SL = scaled_laplacian(g)
    filt = ChebFilter.init(K, 3, 4, rng)
    X = rng.normal(size=(5, 3))
    out = cheb_conv(X, SL, filt).data
    ref = cheb_conv_loops(X, SL.polynomials(K), [b.data for b in filt.betas])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_cheb_conv_batched_equals_per_sample(rng):
    SL = scaled_laplacian(path_graph(6))
    filt = ChebFilter.init(3, 2, 4, rng)
    X = rng.normal(size=(3, 6, 2))
    batched = cheb_conv(X, SL, filt).data
    for b in range(3):
        np.testing.assert_allclose(batched[b], cheb_conv(X[b], SL, filt).data, atol=1e-13)


def test_cheb_conv_dimension_errors(rng):
    SL = scaled_laplacian(path_graph(4))
    filt = ChebFilter.init(2, 3, 2, rng)
    with pytest.raises(DimensionError):
        cheb_conv(rng.normal(size=(5, 3)), SL, filt)
    with pytest.raises(DimensionError):
        cheb_conv(rng.normal(size=(4, 2)), SL, filt)


def test_cheb_filter_names(rng):
    filt = ChebFilter.init(2, 5, 32, rng)
    assert [b.name for b in filt.betas] == ["extractor.beta0", "extractor.beta1"]
    assert (filt.K, filt.d_in, filt.d_out) == (2, 5, 32)


def test_cheb_conv_gradient(rng):
    SL = scaled_laplacian(path_graph(5))
    filt = ChebFilter.init(3, 2, 3, rng)
    X = rng.normal(size=(2, 5, 2))
    w = rng.normal(size=(2, 5, 3))
    fn = lambda: dc.sum(dc.mul(cheb_conv(X, SL, filt), dc.Tensor(w)))
    assert dc.grad_check(fn, filt.betas, tolerance=1e-6).passed
