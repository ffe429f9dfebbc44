"""Layer-level forward oracles and gradient checks."""

import numpy as np
import pytest

from trajsynth.nn import (
    DiffArray,
    ModelParams,
    RMSProp,
    arr_mean,
    arr_sum,
    clip_weights,
    add_conv_encoder,
    add_gru,
    add_mhsa,
    dense,
    gru_step,
    layer_norm,
    mhsa,
    relu,
    residual_conv_encoder,
    residual_layernorm,
    scaled_dot_attention,
)

from gradcheck import check_gradients

RNG = np.random.default_rng(77)


def test_dense_identity_passthrough():
    x = DiffArray(RNG.normal(size=(4, 3)))
    out = dense(x, DiffArray(np.eye(3)), DiffArray(np.zeros(3)))
    np.testing.assert_array_equal(out.values, x.values)


def test_dense_gradients():
    x = RNG.normal(size=(4, 3))
    w = RNG.normal(size=(3, 5))
    b = RNG.normal(size=(5,))
    check_gradients(lambda xx, ww, bb: arr_sum(relu(dense(xx, ww, bb))), [x, w, b])


def test_scaled_dot_attention_matches_direct_formula():
    q, k, v = (RNG.normal(size=(3, 4)) for _ in range(3))
    out = scaled_dot_attention(DiffArray(q), DiffArray(k), DiffArray(v))
    scores = q @ k.T / np.sqrt(4)
    weights = np.exp(scores - scores.max(axis=-1, keepdims=True))
    weights /= weights.sum(axis=-1, keepdims=True)
    np.testing.assert_allclose(out.values, weights @ v, atol=1e-12)


def test_attention_equal_keys_average_values():
    q = RNG.normal(size=(2, 4))
    k = np.tile(RNG.normal(size=(1, 4)), (5, 1))
    v = RNG.normal(size=(5, 4))
    out = scaled_dot_attention(DiffArray(q), DiffArray(k), DiffArray(v))
    np.testing.assert_allclose(out.values, np.tile(v.mean(axis=0), (2, 1)), atol=1e-12)


def test_attention_single_key_returns_value():
    q = RNG.normal(size=(3, 4))
    k = RNG.normal(size=(1, 4))
    v = RNG.normal(size=(1, 4))
    out = scaled_dot_attention(DiffArray(q), DiffArray(k), DiffArray(v))
    np.testing.assert_allclose(out.values, np.tile(v, (3, 1)), atol=1e-12)


def test_attention_output_is_convex_combination():
    q, k = (RNG.normal(size=(4, 6)) for _ in range(2))
    v = RNG.normal(size=(4, 6))
    out = scaled_dot_attention(DiffArray(q), DiffArray(k), DiffArray(v)).values
    assert (out.min(axis=0) >= v.min(axis=0) - 1e-12).all()
    assert (out.max(axis=0) <= v.max(axis=0) + 1e-12).all()


def make_mhsa_params(d_model, seed=3):
    params = ModelParams(seed=seed)
    add_mhsa(params, "attn", d_model)
    return params


def test_mhsa_single_head_identity_projections_reduce_to_attention():
    d = 4
    params = ModelParams(seed=0)
    for name in ("wq", "wk", "wv", "wo"):
        params.add(f"attn/{name}", np.eye(d))
    x = RNG.normal(size=(5, d))
    out = mhsa(DiffArray(x), params, "attn", n_heads=1)
    ref = scaled_dot_attention(DiffArray(x), DiffArray(x), DiffArray(x))
    np.testing.assert_allclose(out.values, ref.values, atol=1e-12)


def test_mhsa_row_permutation_equivariance():
    d = 8
    params = make_mhsa_params(d)
    x = RNG.normal(size=(6, d))
    perm = RNG.permutation(6)
    out = mhsa(DiffArray(x), params, "attn", n_heads=2).values
    out_perm = mhsa(DiffArray(x[perm]), params, "attn", n_heads=2).values
    np.testing.assert_allclose(out_perm, out[perm], atol=1e-12)


def test_mhsa_preserves_shape_batched():
    d = 8
    params = make_mhsa_params(d)
    x = DiffArray(RNG.normal(size=(3, 5, d)))
    assert mhsa(x, params, "attn", n_heads=4).shape == (3, 5, d)


def test_mhsa_gradients():
    d = 4
    params = make_mhsa_params(d)
    x = RNG.normal(size=(3, d))
    weights = {name: params[f"attn/{name}"].values.copy() for name in ("wq", "wk", "wv", "wo")}

    def build(xx, wq, wk, wv, wo):
        p = ModelParams(seed=0)
        for nm, w in zip(("wq", "wk", "wv", "wo"), (wq, wk, wv, wo)):
            p._store[f"attn/{nm}"] = w
        return arr_sum(mhsa(xx, p, "attn", n_heads=2))

    check_gradients(build, [x, weights["wq"], weights["wk"], weights["wv"], weights["wo"]])


def test_layernorm_constant_row_zeroes_out():
    x = DiffArray(np.full((2, 6), 3.5))
    out = layer_norm(x, DiffArray(np.ones(6)), DiffArray(np.zeros(6)))
    np.testing.assert_allclose(out.values, 0.0, atol=1e-9)


def test_residual_layernorm_moments():
    x = DiffArray(RNG.normal(size=(4, 16)))
    sub = DiffArray(RNG.normal(size=(4, 16)))
    out = residual_layernorm(x, sub, DiffArray(np.ones(16)), DiffArray(np.zeros(16))).values
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
    # biased variance approaches 1 up to the 1e-5 guard
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)


def test_layernorm_gradients():
    x = RNG.normal(size=(3, 5))
    g = RNG.normal(size=(5,))
    b = RNG.normal(size=(5,))
    weight = RNG.normal(size=(3, 5))
    check_gradients(lambda xx, gg, bb: arr_sum(layer_norm(xx, gg, bb) * weight), [x, g, b])


def make_gru_params(d_in, d_hidden, seed=5):
    params = ModelParams(seed=seed)
    add_gru(params, "gru", d_in, d_hidden)
    return params


def test_gru_zero_params_halve_hidden_state():
    d = 4
    params = ModelParams(seed=0)
    for gate in ("z", "r", "h"):
        params.zeros(f"gru/w{gate}", (d, d))
        params.zeros(f"gru/y{gate}", (d, d))
        params.zeros(f"gru/b{gate}", (d,))
    v = RNG.normal(size=(1, d))
    h = DiffArray(v.copy())
    for t in range(1, 4):
        h = gru_step(DiffArray(RNG.normal(size=(1, d))), h, params, "gru")
        np.testing.assert_allclose(h.values, v / 2**t, atol=1e-12)


def test_gru_zero_state_zero_params_stays_zero():
    d = 3
    params = ModelParams(seed=0)
    for gate in ("z", "r", "h"):
        params.zeros(f"gru/w{gate}", (d, d))
        params.zeros(f"gru/y{gate}", (d, d))
        params.zeros(f"gru/b{gate}", (d,))
    h = DiffArray(np.zeros((2, d)))
    for _ in range(3):
        h = gru_step(DiffArray(RNG.normal(size=(2, d))), h, params, "gru")
        np.testing.assert_array_equal(h.values, 0.0)


def test_gru_unrolled_gradients():
    d_in, d_h, steps = 3, 4, 5
    params = make_gru_params(d_in, d_h)
    xs = RNG.normal(size=(steps, 2, d_in))
    names = params.names()
    values = [params[n].values.copy() for n in names]

    def build(*tensors):
        p = ModelParams(seed=0)
        for nm, w in zip(names, tensors[:-1]):
            p._store[nm] = w
        h = tensors[-1]
        for t in range(steps):
            h = gru_step(DiffArray(xs[t]), h, p, "gru")
        return arr_sum(h)

    h0 = RNG.normal(size=(2, d_h))
    check_gradients(build, values + [h0])


def test_conv_encoder_zero_input_zero_embedding():
    params = ModelParams(seed=9)
    add_conv_encoder(params, "cond", in_channels=2, embedding_dim=16)
    out = residual_conv_encoder(DiffArray(np.zeros((2, 8, 8))), params, "cond")
    np.testing.assert_allclose(out.values, 0.0, atol=1e-12)


@pytest.mark.parametrize("n", [8, 16, 32])
def test_conv_encoder_output_shape(n):
    params = ModelParams(seed=9)
    add_conv_encoder(params, "cond", in_channels=3, embedding_dim=24)
    out = residual_conv_encoder(DiffArray(RNG.normal(size=(3, n, n))), params, "cond")
    assert out.shape == (24,)


def test_conv_encoder_gradients_small():
    params = ModelParams(seed=11)
    add_conv_encoder(params, "cond", in_channels=2, embedding_dim=4, widths=(3, 4, 4))
    x = RNG.normal(size=(2, 8, 8))
    names = params.names()
    # jitter zero-initialized tensors off the relu kink, where central
    # differences disagree with the subgradient-at-0 convention
    values = [params[n].values + 0.05 * RNG.normal(size=params[n].shape) for n in names]

    def build(xx, *tensors):
        p = ModelParams(seed=0)
        for nm, w in zip(names, tensors):
            p._store[nm] = w
        return arr_sum(residual_conv_encoder(xx, p, "cond"))

    check_gradients(build, [x] + values, tol=1e-4)


def test_rmsprop_zero_gradient_leaves_params():
    params = ModelParams(seed=1)
    params.add("w", np.array([1.0, -2.0]))
    before = params["w"].values.copy()
    RMSProp(lr=0.1).step(params)
    np.testing.assert_array_equal(params["w"].values, before)


def test_rmsprop_descends_scalar_quadratic():
    params = ModelParams(seed=1)
    params.add("w", np.array([5.0]))
    opt = RMSProp(lr=0.05)
    losses = []
    for _ in range(100):
        params.zero_grad()
        w = params["w"]
        loss = arr_sum(w * w)
        losses.append(float(loss.values))
        loss.backward()
        opt.step(params)
    assert all(a >= b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0] * 1e-2


def test_clip_weights_clamps():
    params = ModelParams(seed=1)
    params.add("w", np.array([-0.5, 0.005, 0.5]))
    clip_weights(params, 0.01)
    np.testing.assert_array_equal(params["w"].values, [-0.01, 0.005, 0.01])


def test_params_serialization_round_trips_bit_exact(tmp_path):
    params = ModelParams(seed=123)
    params.glorot("enc/w", 7, 5)
    params.zeros("enc/b", (5,))
    params.glorot("head/w", 5, 1)
    path = tmp_path / "ckpt.bin"
    params.save(path, hyperparameters={"heads": 8})
    loaded, hyper = ModelParams.load(path)
    assert hyper == {"heads": 8}
    assert loaded.names() == params.names()
    for name in params.names():
        assert np.array_equal(loaded[name].values, params[name].values)


def test_param_init_is_name_keyed_and_reproducible():
    a = ModelParams(seed=42)
    a.glorot("x", 4, 4)
    a.glorot("y", 4, 4)
    b = ModelParams(seed=42)
    b.glorot("y", 4, 4)  # declared in the opposite order
    b.glorot("x", 4, 4)
    assert np.array_equal(a["x"].values, b["x"].values)
    assert np.array_equal(a["y"].values, b["y"].values)
    assert not np.array_equal(a["x"].values, a["y"].values)
