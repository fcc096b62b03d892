from .tensor import (
    Tensor,
    add,
    clamp_min,
    concat,
    conv2d,
    conv2d_transpose,
    div,
    exp,
    getitem,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mul,
    no_grad,
    power,
    reshape,
    sigmoid,
    silu,
    softmax,
    stop_gradient,
    sub,
    tanh,
    tmean,
    transpose,
    tsum,
)
from .layers import Conv2d, ConvTranspose2d, GRUCell, LayerNorm, Linear, MLP, prefix_params, trunc_normal
from .adam import Adam
