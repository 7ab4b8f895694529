from .tensor import (
    Tape,
    Tensor,
    add,
    astensor,
    broadcast_to,
    concat,
    div,
    dropout,
    getitem,
    layernorm,
    log_softmax,
    matmul,
    maximum,
    minimum,
    mul,
    neg,
    param,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    take,
    tanh,
    tmean,
    transpose,
    tsum,
    weighted_sum,
    where_mask,
)
from .nn_ops import bilstm, conv1d, lstm, temporal_roialign
from .gradcheck import check_gradients, numerical_grad

__all__ = [
    "Tape", "Tensor", "astensor", "param",
    "add", "sub", "mul", "div", "neg", "matmul",
    "transpose", "reshape", "broadcast_to", "concat", "getitem", "take",
    "tsum", "tmean",
    "relu", "sigmoid", "tanh", "softmax", "log_softmax", "layernorm", "dropout",
    "maximum", "minimum", "where_mask", "weighted_sum",
    "conv1d", "lstm", "bilstm", "temporal_roialign",
    "check_gradients", "numerical_grad",
]
