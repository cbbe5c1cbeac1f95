from .tensor import Tensor, as_tensor, concat, stack
from .ops import (
    BatchNormState,
    batchnorm,
    bce_with_logits,
    causal_conv1d,
    concat_channels,
    conv2d,
    dense,
    dropout,
    elementwise_mul,
    elu,
    exp,
    global_avg_pool,
    log,
    relu,
    safe_norm,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    sqrt,
    square,
    tanh,
)
from .optim import OptimizerState, adam, clip_global_norm, global_norm, optimizer_step, sgd
from .gradcheck import check_direction, check_function, check_parameters, grad, relative_error

__all__ = [
    "Tensor", "as_tensor", "concat", "stack",
    "BatchNormState", "batchnorm", "bce_with_logits", "causal_conv1d", "concat_channels",
    "conv2d", "dense", "dropout", "elementwise_mul", "elu", "exp", "global_avg_pool", "log",
    "relu", "safe_norm", "sigmoid", "softmax", "softmax_cross_entropy", "sqrt", "square", "tanh",
    "OptimizerState", "adam", "clip_global_norm", "global_norm", "optimizer_step", "sgd",
    "check_direction", "check_function", "check_parameters", "grad", "relative_error",
]
