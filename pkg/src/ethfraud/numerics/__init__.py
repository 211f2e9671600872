from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients
from .nn import Embedding, LayerNorm, Linear, Module, MultiHeadAttention, Parameter, TransformerBlock
from .optim import Adam, AdamState, adam_step
from .tensor import (
    DimensionError,
    Tensor,
    attention,
    concat,
    log_softmax,
    matmul,
    no_grad,
    softmax,
)

__all__ = [
    "Adam", "AdamState", "DimensionError", "Embedding", "LayerNorm", "Linear", "Module",
    "MultiHeadAttention", "Parameter", "Tensor", "TransformerBlock", "adam_step", "attention",
    "check_gradients", "concat", "load_checkpoint", "log_softmax", "matmul", "no_grad",
    "save_checkpoint", "softmax",
]
