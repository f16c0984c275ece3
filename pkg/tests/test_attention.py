import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgstime.attention import (AttentionParams, AttentionTrace, attention_scores, build_band_mask,
                               masked_attention, multi_head_forward, project_qkv, split_heads)
from lgstime.errors import DimensionError
from lgstime.gradcheck import check_gradients
from lgstime.reference import dense_attention
from lgstime.tensor import Tensor, concat, parameter, softmax_rows
from lgstime.verify import attention_case, dense_equivalence


def _params(rng, d=4, h=2):
    return AttentionParams(*[parameter(rng.standard_normal((d, d)) / math.sqrt(d)) for _ in range(4)], heads=h)


def test_identity_projections(rng):
    I = np.eye(4)
    p = AttentionParams(*[parameter(I) for _ in range(4)], heads=2)
    X = Tensor(rng.standard_normal((5, 4)))
    for T_ in project_qkv(p, X):
        assert np.array_equal(T_.data, X.data)


def test_head_blocks(rng):
    p = _params(rng)
    X = Tensor(rng.standard_normal((3, 4)))
    Q = project_qkv(p, X)[0]
    heads = split_heads(Q, 2)
    assert np.array_equal(heads[0].data, Q.data[:, 0:2])
    assert np.array_equal(heads[1].data, Q.data[:, 2:4])
    assert np.array_equal(concat(heads).data, Q.data)


def test_width_mismatch(rng):
    with pytest.raises(DimensionError):
        project_qkv(_params(rng), Tensor(np.zeros((3, 5))))
    with pytest.raises(DimensionError):
        AttentionParams(*[parameter(np.zeros((6, 6)))] * 4, heads=4)


def test_band_mask_examples():
    assert build_band_mask(1, 5).M.tolist() == [[1.0]]
    assert np.array_equal(build_band_mask(4, 0).M, np.eye(4))
    assert build_band_mask(6, 2).M.sum() == sum(abs(j - k) <= 2 for j in range(6) for k in range(6)) == 24
    assert np.all(build_band_mask(5, 4).M == 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(0, 35))
def test_band_mask_invariants(n, w):
    M = build_band_mask(n, w).M
    assert np.array_equal(M, M.T) and np.all(np.diag(M) == 1)
    for j in range(n):
        assert M[j].sum() == min(j, w) + min(n - 1 - j, w) + 1


def test_scores_examples(rng):
    S = attention_scores(Tensor(np.eye(4)), Tensor(np.eye(4))).data
    np.testing.assert_allclose(S, np.eye(4) / 2.0, rtol=0, atol=0)
    assert np.all(attention_scores(Tensor(np.zeros((3, 2))), Tensor(rng.standard_normal((3, 2)))).data == 0)
    Q, K = rng.standard_normal((2, 4)), rng.standard_normal((2, 4))
    hand = [[sum(Q[j, c] * K[k, c] for c in range(4)) / 2.0 for k in range(2)] for j in range(2)]
    np.testing.assert_allclose(attention_scores(Tensor(Q), Tensor(K)).data, hand, atol=1e-12)


def test_masked_attention_examples(rng):
    S = rng.standard_normal((4, 4))
    np.testing.assert_array_equal(masked_attention(Tensor(S), build_band_mask(4, 3)).data,
                                  softmax_rows(Tensor(S)).data)
    assert np.array_equal(masked_attention(Tensor(S), build_band_mask(4, 0)).data, np.eye(4))
    A = masked_attention(Tensor(S), build_band_mask(4, 1)).data
    for j in range(4):
        ks = [k for k in range(4) if abs(j - k) <= 1]
        e = np.exp(S[j, ks] - S[j, ks].max())
        np.testing.assert_allclose(A[j, ks], e / e.sum(), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(0, 5))
def test_row_stochastic_and_mask_respect(seed, n, w):
    rng = np.random.default_rng(seed)
    mask = build_band_mask(n, w)
    A = masked_attention(Tensor(rng.standard_normal((n, n)) * 30), mask).data
    assert np.all(np.abs(A.sum(axis=1) - 1) <= 1e-9)
    assert np.all(A[mask.M == 0] < 1e-30)


def test_single_token_is_value_projection(rng):
    p = _params(rng)
    X = Tensor(rng.standard_normal((1, 4)))
    out = multi_head_forward(p, X, w=3).data
    np.testing.assert_allclose(out, X.data @ p.W_V.data @ p.W_O.data, atol=1e-14)


@pytest.mark.parametrize("n", [2, 5, 9, 16])
def test_full_band_matches_dense_oracle(n):
    val_err, grad_err = dense_equivalence(n, n)
    assert val_err <= 1e-12 and grad_err <= 1e-10


def test_dense_oracle_agrees_with_torch(rng):
    torch = pytest.importorskip("torch")
    n, d, h = 7, 8, 2
    Ws = [rng.standard_normal((d, d)) / math.sqrt(d) for _ in range(4)]
    X = rng.standard_normal((n, d))
    G = rng.standard_normal((n, d))
    out, grads = dense_attention(X, *Ws, heads=h, upstream=G)
    tw = [torch.tensor(W, dtype=torch.float64, requires_grad=True) for W in Ws]
    tx = torch.tensor(X, dtype=torch.float64, requires_grad=True)
    Q, K, V = tx @ tw[0], tx @ tw[1], tx @ tw[2]
    heads = []
    for i in range(h):
        b = slice(i * d // h, (i + 1) * d // h)
        A = torch.softmax(Q[:, b] @ K[:, b].T / math.sqrt(d // h), dim=-1)
        heads.append(A @ V[:, b])
    tout = torch.cat(heads, dim=-1) @ tw[3]
    (tout * torch.tensor(G)).sum().backward()
    np.testing.assert_allclose(out, tout.detach().numpy(), atol=1e-12)
    for name, t in zip(("W_Q", "W_K", "W_V", "W_O"), tw):
        np.testing.assert_allclose(grads[name], t.grad.numpy(), atol=1e-12)
    np.testing.assert_allclose(grads["X"], tx.grad.numpy(), atol=1e-12)


def test_gradient_check_desk_scale():
    p, loss = attention_case(0, n=6, d_model=8, heads=2, w=2)
    assert max(check_gradients(loss, p.parameters()).values()) < 1e-4


def test_head_permutation_equivariance(rng):
    d, h = 8, 4
    dh = d // h
    p = _params(rng, d, h)
    X = Tensor(rng.standard_normal((6, d)))
    perm = [2, 0, 3, 1]
    cols = np.concatenate([np.arange(i * dh, (i + 1) * dh) for i in perm])
    q = AttentionParams(parameter(p.W_Q.data[:, cols]), parameter(p.W_K.data[:, cols]),
                        parameter(p.W_V.data[:, cols]), parameter(p.W_O.data[cols, :]), heads=h)
    np.testing.assert_allclose(multi_head_forward(p, X, 2).data, multi_head_forward(q, X, 2).data,
                               atol=1e-12)


def test_locality(rng):
    n, w, pos = 10, 2, 4
    p = _params(rng, 4, 2)
    X = rng.standard_normal((n, 4))
    X2 = X.copy()
    X2[pos] += 1.0
    t1, t2 = AttentionTrace([], []), AttentionTrace([], [])
    multi_head_forward(p, Tensor(X), w, t1)
    multi_head_forward(p, Tensor(X2), w, t2)
    diff = np.abs(concat(t1.heads).data - concat(t2.heads).data).max(axis=1)
    for q in range(n):
        if abs(q - pos) > w:
            assert diff[q] == 0.0
        else:
            assert diff[q] > 0.0


def test_batched_equals_per_sequence(rng):
    p = _params(rng, 4, 2)
    X = rng.standard_normal((3, 7, 4))
    batched = multi_head_forward(p, Tensor(X), 2).data
    for b in range(3):
        np.testing.assert_allclose(batched[b], multi_head_forward(p, Tensor(X[b]), 2).data, atol=1e-14)
