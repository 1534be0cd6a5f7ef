"""Small float64 autodiff library: tensors, layers, Adam, serialization."""

from .layers import (
    MLP,
    BiLSTM,
    Embedding,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    TransformerBlock,
    sinusoidal_encoding,
)
from .optim import AdamState, adam_step
from .serialize import dumps_tensors, load_tensors, loads_tensors, save_tensors
from .tensor import (
    Tensor,
    add,
    concat,
    cross_entropy,
    embedding,
    layer_norm,
    log_softmax,
    lstm,
    matmul,
    mean,
    mul,
    no_grad,
    parameter,
    relu,
    reshape,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    sum_,
    tanh,
    transpose,
)

__all__ = [
    "AdamState", "BiLSTM", "Embedding", "LayerNorm", "Linear", "MLP", "Module", "MultiHeadAttention",
    "Tensor", "TransformerBlock", "adam_step", "add", "concat", "cross_entropy", "dumps_tensors",
    "embedding", "layer_norm", "load_tensors", "loads_tensors", "log_softmax", "lstm", "matmul", "mean",
    "mul", "no_grad", "parameter", "relu", "reshape", "save_tensors", "sigmoid", "sinusoidal_encoding",
    "softmax", "softmax_cross_entropy", "sum_", "tanh", "transpose",
]
