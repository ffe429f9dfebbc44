from .array import (
    DiffArray,
    arr_mean,
    arr_sum,
    concat,
    conv2d,
    exp,
    gather_rows,
    log,
    matmul,
    relu,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    square,
    stack,
    straight_through,
    swapaxes,
    take,
    tanh,
)
from .params import ModelParams
from .layers import (
    add_conv_encoder,
    add_dense,
    add_gru,
    add_mhsa,
    apply_dense,
    channel_norm,
    dense,
    gru_step,
    layer_norm,
    mhsa,
    residual_conv_encoder,
    residual_layernorm,
    scaled_dot_attention,
)
from .optim import RMSProp, clip_weights, rmsprop_step
