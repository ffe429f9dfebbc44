"""Neural building blocks: dense, attention, layer norm, GRU, conv encoder.

All functions accept and return :class:`DiffArray` and support a leading
batch dimension where noted. Parameters live in a :class:`ModelParams`
under caller-chosen name prefixes.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError
from .array import (
    DiffArray,
    arr_mean,
    concat,
    conv2d,
    matmul,
    relu,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    square,
    swapaxes,
    tanh,
)
from .params import ModelParams

LAYERNORM_EPS = 1e-5


def dense(x: DiffArray, weights: DiffArray, bias: DiffArray | None = None) -> DiffArray:
    out = matmul(x, weights)
    if bias is not None:
        out = out + bias
    return out


def add_dense(params: ModelParams, prefix: str, d_in: int, d_out: int) -> None:
    params.glorot(f"{prefix}/w", d_in, d_out)
    params.zeros(f"{prefix}/b", (d_out,))


def apply_dense(params: ModelParams, prefix: str, x: DiffArray) -> DiffArray:
    return dense(x, params[f"{prefix}/w"], params[f"{prefix}/b"])


def layer_norm(x: DiffArray, gain: DiffArray, bias: DiffArray, eps: float = LAYERNORM_EPS) -> DiffArray:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = arr_mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = arr_mean(square(centered), axis=-1, keepdims=True)
    normed = centered / sqrt(var + eps)
    return normed * gain + bias


def residual_layernorm(x: DiffArray, sublayer_out: DiffArray, gain: DiffArray, bias: DiffArray) -> DiffArray:
    return layer_norm(x + sublayer_out, gain, bias)


def scaled_dot_attention(q: DiffArray, k: DiffArray, v: DiffArray) -> DiffArray:
    """softmax(Q K^T / sqrt(d_k)) V, batched over leading axes."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeMismatchError(f"query/key dims differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeMismatchError(f"key/value lengths differ: {k.shape} vs {v.shape}")
    d_k = q.shape[-1]
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / np.sqrt(d_k))
    return matmul(softmax(scores), v)


def add_mhsa(params: ModelParams, prefix: str, d_model: int) -> None:
    for name in ("wq", "wk", "wv", "wo"):
        params.glorot(f"{prefix}/{name}", d_model, d_model)


def mhsa(x: DiffArray, params: ModelParams, prefix: str, n_heads: int) -> DiffArray:
    """Multi-head self-attention on (..., n, d_model); output has the input shape."""
    d_model = x.shape[-1]
    if d_model % n_heads != 0:
        raise ShapeMismatchError(f"d_model {d_model} not divisible by {n_heads} heads")
    d_head = d_model // n_heads
    lead = x.shape[:-2]
    n = x.shape[-2]

    def split_heads(y: DiffArray) -> DiffArray:
        y = reshape(y, lead + (n, n_heads, d_head))
        return swapaxes(y, -3, -2)  # (..., heads, n, d_head)

    q = split_heads(matmul(x, params[f"{prefix}/wq"]))
    k = split_heads(matmul(x, params[f"{prefix}/wk"]))
    v = split_heads(matmul(x, params[f"{prefix}/wv"]))
    heads = scaled_dot_attention(q, k, v)
    merged = reshape(swapaxes(heads, -3, -2), lead + (n, d_model))
    return matmul(merged, params[f"{prefix}/wo"])


def add_gru(params: ModelParams, prefix: str, d_in: int, d_hidden: int) -> None:
    for gate in ("z", "r", "h"):
        params.glorot(f"{prefix}/w{gate}", d_in, d_hidden)
        params.glorot(f"{prefix}/y{gate}", d_hidden, d_hidden)
        params.zeros(f"{prefix}/b{gate}", (d_hidden,))


def gru_step(x_t: DiffArray, h_prev: DiffArray, params: ModelParams, prefix: str) -> DiffArray:
    """One gated-recurrent step; update gate blends the candidate with h_prev."""
    z = sigmoid(dense(x_t, params[f"{prefix}/wz"]) + dense(h_prev, params[f"{prefix}/yz"]) + params[f"{prefix}/bz"])
    r = sigmoid(dense(x_t, params[f"{prefix}/wr"]) + dense(h_prev, params[f"{prefix}/yr"]) + params[f"{prefix}/br"])
    h_hat = tanh(
        dense(x_t, params[f"{prefix}/wh"]) + dense(r * h_prev, params[f"{prefix}/yh"]) + params[f"{prefix}/bh"]
    )
    return z * h_hat + (1.0 - z) * h_prev


def channel_norm(x: DiffArray, gain: DiffArray, bias: DiffArray, eps: float = LAYERNORM_EPS) -> DiffArray:
    """Normalize each channel of a (C, H, W) map over its spatial extent."""
    mu = arr_mean(x, axis=(-2, -1), keepdims=True)
    centered = x - mu
    var = arr_mean(square(centered), axis=(-2, -1), keepdims=True)
    normed = centered / sqrt(var + eps)
    return normed * reshape(gain, (-1, 1, 1)) + reshape(bias, (-1, 1, 1))


def add_conv_encoder(
    params: ModelParams,
    prefix: str,
    in_channels: int,
    embedding_dim: int = 64,
    widths: tuple = (32, 32, 64),
) -> None:
    c_prev = widths[0]
    params.glorot(f"{prefix}/stem/w", in_channels * 9, c_prev, shape=(c_prev, in_channels, 3, 3))
    params.zeros(f"{prefix}/stem/b", (c_prev,))
    for i, c in enumerate(widths):
        params.glorot(f"{prefix}/block{i}/conv1_w", c_prev * 9, c, shape=(c, c_prev, 3, 3))
        params.zeros(f"{prefix}/block{i}/conv1_b", (c,))
        params.add(f"{prefix}/block{i}/norm_g", np.ones(c))
        params.zeros(f"{prefix}/block{i}/norm_b", (c,))
        params.glorot(f"{prefix}/block{i}/conv2_w", c * 9, c, shape=(c, c, 3, 3))
        params.zeros(f"{prefix}/block{i}/conv2_b", (c,))
        params.glorot(f"{prefix}/block{i}/skip_w", c_prev, c, shape=(c, c_prev, 1, 1))
        c_prev = c
    params.glorot(f"{prefix}/head/w", c_prev, embedding_dim)
    params.zeros(f"{prefix}/head/b", (embedding_dim,))


def residual_conv_encoder(matrix: DiffArray, params: ModelParams, prefix: str) -> DiffArray:
    """Residual conv stack with stride-2 downsampling, pooled to an embedding vector.

    Input is a (T, N, N) tensor viewed as a T-channel image; N must be >= 8
    so three halvings keep a positive spatial extent.
    """
    if matrix.ndim != 3:
        raise ShapeMismatchError(f"expected (T, N, N) input, got {matrix.shape}")
    if matrix.shape[1] < 8 or matrix.shape[1] != matrix.shape[2]:
        raise ShapeMismatchError(f"spatial extent must be square and >= 8, got {matrix.shape}")
    x = conv2d(matrix, params[f"{prefix}/stem/w"], params[f"{prefix}/stem/b"], stride=1, padding=1)
    block = 0
    while f"{prefix}/block{block}/conv1_w" in params:
        p = f"{prefix}/block{block}"
        y = conv2d(x, params[f"{p}/conv1_w"], params[f"{p}/conv1_b"], stride=2, padding=1)
        y = relu(channel_norm(y, params[f"{p}/norm_g"], params[f"{p}/norm_b"]))
        y = conv2d(y, params[f"{p}/conv2_w"], params[f"{p}/conv2_b"], stride=1, padding=1)
        x = y + conv2d(x, params[f"{p}/skip_w"], None, stride=2, padding=0)
        block += 1
    pooled = arr_mean(x, axis=(-2, -1))  # global average pool to (C,)
    return apply_dense(params, f"{prefix}/head", pooled)
