"""Parameters, a minimal module system and the transformer building blocks."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

# additive score for masked-out keys; exp() underflows to exactly 0
MASK_VALUE = -1e9


class Parameter(Tensor):
    def __init__(self, data, name: str = "", trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.requires_grad = flag

    @property
    def tensor(self) -> Tensor:
        return self

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


class Module:
    training: bool = True

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out = []
        for key, child in self._children():
            name = f"{prefix}{key}"
            if isinstance(child, Parameter):
                child.name = name
                out.append((name, child))
            else:
                out.extend(child.named_parameters(prefix=name + "."))
        return out

    def parameters(self, trainable_only: bool = False) -> list[Parameter]:
        params = [p for _, p in self.named_parameters()]
        return [p for p in params if p.trainable] if trainable_only else params

    def modules(self) -> Iterator[Module]:
        yield self
        for _, child in self._children():
            if isinstance(child, Module):
                yield from child.modules()

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise T.DimensionError(f"{name}: expected {p.shape}, got {value.shape}")
            p.data = value.copy()


def normal_init(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


def glorot_init(rng: np.random.Generator, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, std: float = 0.02):
        self.weight = Parameter(normal_init(rng, (d_in, d_out), std))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator, std: float = 0.02):
        self.weight = Parameter(normal_init(rng, (num, dim), std))

    def __call__(self, ids) -> Tensor:
        return T.take_rows(self.weight, ids)


def key_padding_mask(valid: np.ndarray) -> np.ndarray:
    """(B, L) boolean validity -> additive (B, 1, 1, L) attention mask."""
    return np.where(valid, 0.0, MASK_VALUE)[:, None, None, :]


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dropout: float = 0.0):
        if dim % heads:
            raise ValueError(f"model dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng)
        self.out = Linear(dim, dim, rng)
        self.dropout = dropout
        self._rng = rng

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, length, dim = x.shape
        dk = dim // self.heads
        qkv = self.qkv(x).reshape(b, length, 3, self.heads, dk)
        qkv = qkv.transpose(2, 0, 3, 1, 4)  # (3, B, H, L, dk)
        ctx = T.attention(qkv[0], qkv[1], qkv[2], mask)
        ctx = ctx.transpose(0, 2, 1, 3).reshape(b, length, dim)
        return T.dropout(self.out(ctx), self.dropout, self._rng, self.training)


class TransformerBlock(Module):
    """Pre-norm encoder block: x + MHA(LN x), then x + FFN(LN x)."""

    def __init__(self, dim: int, heads: int, ff_dim: int, rng: np.random.Generator,
                 dropout: float = 0.0):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng, dropout)
        self.ln2 = LayerNorm(dim)
        self.ff1 = Linear(dim, ff_dim, rng)
        self.ff2 = Linear(ff_dim, dim, rng)
        self.dropout = dropout
        self._rng = rng

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        x = x + self.attn(self.ln1(x), mask)
        h = self.ff2(T.gelu(self.ff1(self.ln2(x))))
        return x + T.dropout(h, self.dropout, self._rng, self.training)
