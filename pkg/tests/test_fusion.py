import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from motoclf import fusion as fu
from motoclf import neural as nn
from motoclf import tensorcore as tc
from motoclf.tensorcore import Tensor, gradcheck


def shared_params(rng, D):
    H = D // 2
    mk = lambda: nn.LstmParams(Tensor(rng.normal(0, 0.5, (D + H, 4 * H))), Tensor(rng.normal(0, 0.5, 4 * H)))  # noqa: E731
    return nn.BiLstmParams(mk(), mk())


def fusion_linear(rng, D):
    return fu.FusionLinear(Tensor(rng.normal(0, 0.5, (2 * D, D))), Tensor(rng.normal(0, 0.5, D)))


def test_relevance_examples():
    eye = Tensor(np.eye(3))
    np.testing.assert_array_equal(fu.relevance(eye, eye).data, np.eye(3))
    y_aux = Tensor([[0.0, 0.0], [1.0, 2.0]])
    y_c = Tensor([[3.0, 4.0], [5.0, 6.0]])
    re = fu.relevance(y_aux, y_c).data
    assert not re[0].any()
    np.testing.assert_array_equal(re, oracles.relevance(y_aux.data.tolist(), y_c.data.tolist()))
    with pytest.raises(tc.ShapeError):
        fu.relevance(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))


def test_attn_weights_examples():
    np.testing.assert_array_equal(fu.attn_weights(Tensor([[0.3, -2.0, 7.0]])).data, [[1.0, 1.0, 1.0]])
    np.testing.assert_allclose(fu.attn_weights(Tensor(np.full((4, 2), 1.7))).data, 0.25, rtol=0, atol=1e-15)
    col = fu.attn_weights(Tensor([[1.0], [0.0]])).data[:, 0]
    e = math.e
    np.testing.assert_allclose(col, [e / (1 + e), 1 / (1 + e)], rtol=1e-15)
    np.testing.assert_allclose(col, [0.73106, 0.26894], atol=1e-5)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-30, 30)),
       st.floats(-10, 10))
def test_attn_columns_normalised_and_shift_invariant(re, c):
    a = fu.attn_weights(Tensor(re)).data
    np.testing.assert_allclose(a.sum(axis=0), 1.0, rtol=0, atol=1e-12)
    assert (a > 0).all()
    shifted = re.copy()
    shifted[:, 0] += c
    np.testing.assert_allclose(fu.attn_weights(Tensor(shifted)).data, a, rtol=1e-12, atol=1e-15)


def test_pool_examples(rng):
    y = rng.normal(size=(3, 2))
    one_hot = np.zeros((3, 4))
    one_hot[1] = 1.0
    np.testing.assert_array_equal(fu.pool(Tensor(one_hot), Tensor(y)).data, np.tile(y[1], (4, 1)))
    uniform = np.full((3, 2), 1 / 3)
    np.testing.assert_allclose(fu.pool(Tensor(uniform), Tensor(y)).data, np.tile(y.mean(0), (2, 1)), atol=1e-15)
    alpha = rng.dirichlet(np.ones(3), size=2).T
    np.testing.assert_allclose(fu.pool(Tensor(alpha), Tensor(y)).data,
                               oracles.pool(alpha.tolist(), y.tolist()), rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_pool_stays_in_convex_hull(l_aux, lc, seed):
    rng = np.random.default_rng(seed)
    y_aux, y_c = rng.normal(size=(l_aux, 4)), rng.normal(size=(lc, 4))
    att = fu.pool(fu.attn_weights(fu.relevance(Tensor(y_aux), Tensor(y_c))), Tensor(y_aux)).data
    assert (att >= y_aux.min(0) - 1e-12).all() and (att <= y_aux.max(0) + 1e-12).all()


def test_fuse_selecting_char_half(rng):
    D = 3
    W = np.vstack([np.zeros((D, D)), np.eye(D)])
    fl = fu.FusionLinear(Tensor(W), Tensor(np.zeros(D)))
    e_c = rng.normal(size=(2, D))
    np.testing.assert_array_equal(fu.fuse(Tensor(rng.normal(size=(2, D))), Tensor(e_c), fl).data, e_c)
    np.testing.assert_array_equal(fu.fuse(Tensor(np.zeros((2, D))), Tensor(e_c), fl).data, e_c)


def test_fuse_gradient(rng):
    args = [rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), rng.normal(size=(6, 3)), rng.normal(size=3)]
    f = lambda a, e, W, b: tc.total(tc.tanh(fu.fuse(a, e, fu.FusionLinear(W, b))))  # noqa: E731
    assert gradcheck(f, args) < 1e-6


def test_stream_degenerate_lengths(rng):
    D = 4
    p, fl = shared_params(rng, D), fusion_linear(rng, D)
    e_c, e_aux = rng.normal(size=(1, D)), rng.normal(size=(1, D))
    out = fu.attention_stream(Tensor(e_c), Tensor(e_aux), p, fl)
    np.testing.assert_array_equal(out.alpha.data, [[1.0]])
    y_aux = nn.bilstm(Tensor(e_aux), p)
    expect = nn.bilstm(fu.fuse(y_aux, Tensor(e_c), fl), p)
    np.testing.assert_array_equal(out.fused.data, expect.data)


def test_identical_aux_gives_identical_streams(rng):
    D = 4
    p, fl = shared_params(rng, D), fusion_linear(rng, D)
    e_c, e_aux = Tensor(rng.normal(size=(3, D))), rng.normal(size=(2, D))
    a = fu.attention_stream(e_c, Tensor(e_aux.copy()), p, fl)
    b = fu.attention_stream(e_c, Tensor(e_aux.copy()), p, fl)
    assert np.array_equal(a.fused.data, b.fused.data)


@pytest.mark.parametrize("lc, l_aux", [(2, 2), (1, 3), (3, 1)])
def test_stream_matches_scalar_oracle(lc, l_aux):
    rng = np.random.default_rng(lc * 10 + l_aux)
    D = 4
    p, fl = shared_params(rng, D), fusion_linear(rng, D)
    e_c, e_aux = rng.normal(size=(lc, D)), rng.normal(size=(l_aux, D))
    out = fu.attention_stream(Tensor(e_c), Tensor(e_aux), p, fl)
    want, alpha = oracles.attention_stream(
        e_c.tolist(), e_aux.tolist(),
        p.forward.W.data.tolist(), p.forward.b.data.tolist(),
        p.backward.W.data.tolist(), p.backward.b.data.tolist(),
        fl.W.data.tolist(), fl.b.data.tolist(),
    )
    np.testing.assert_allclose(out.fused.data, want, rtol=0, atol=1e-10)
    np.testing.assert_allclose(out.alpha.data, alpha, rtol=0, atol=1e-12)


def test_stream_batched_matches_single(rng):
    D = 4
    p, fl = shared_params(rng, D), fusion_linear(rng, D)
    e_c, e_aux = rng.normal(size=(2, 3, D)), rng.normal(size=(2, 5, D))
    out = fu.attention_stream(Tensor(e_c), Tensor(e_aux), p, fl)
    for k in range(2):
        single = fu.attention_stream(Tensor(e_c[k]), Tensor(e_aux[k]), p, fl)
        np.testing.assert_allclose(out.fused.data[k], single.fused.data, rtol=0, atol=1e-13)
        np.testing.assert_allclose(out.alpha.data[k], single.alpha.data, rtol=0, atol=1e-13)
