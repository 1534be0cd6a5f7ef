"""Parameterised layers built on the autodiff primitives."""

from __future__ import annotations

import math

import numpy as np

from ..errors import AllKeysMasked, EmptySequence, ShapeMismatch
from . import tensor as T
from .tensor import Tensor, parameter


class Module:
    """Anything holding parameters; discovers them through attributes."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{key}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ShapeMismatch(f"{name}: expected {p.shape}, got {state[name].shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _uniform(rng, fan_in, shape):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = parameter(_uniform(rng, n_in, (n_in, n_out)))
        self.bias = parameter(_uniform(rng, n_in, (n_out,)))

    def __call__(self, x) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)


class Embedding(Module):
    """Lookup table; row 0 is padding, stays zero and never receives gradient."""

    def __init__(self, cardinality: int, dim: int, rng: np.random.Generator):
        w = rng.normal(0.0, 0.1, size=(cardinality, dim))
        w[0] = 0.0
        self.weight = parameter(w)

    @property
    def cardinality(self):
        return self.weight.shape[0]

    @property
    def dim(self):
        return self.weight.shape[1]

    def __call__(self, ids) -> Tensor:
        return T.embedding(self.weight, ids, padding_idx=0)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = parameter(np.ones(dim))
        self.shift = parameter(np.zeros(dim))

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gain, self.shift)


class MLP(Module):
    """Linear layers with ReLU between (and after, unless ``final_activation`` is off)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, final_activation: bool = True):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes, sizes[1:])]
        self.final_activation = final_activation

    def __call__(self, x) -> Tensor:
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < len(self.layers) - 1 or self.final_activation:
                x = T.relu(x)
        return x


class LSTMDirection(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.w_in = parameter(_uniform(rng, hidden, (n_in, 4 * hidden)))
        self.w_rec = parameter(_uniform(rng, hidden, (hidden, 4 * hidden)))
        self.bias = parameter(_uniform(rng, hidden, (4 * hidden,)))


class BiLSTM(Module):
    """Bidirectional LSTM returning [forward h at last real step, backward h at step 0]."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.fwd = LSTMDirection(n_in, hidden, rng)
        self.bwd = LSTMDirection(n_in, hidden, rng)

    @property
    def output_dim(self):
        return 2 * self.hidden

    def __call__(self, seq, mask) -> Tensor:
        mask = np.asarray(mask, dtype=bool)
        if seq.shape[1] == 0 or not mask.any(axis=1).all():
            raise EmptySequence("every sequence needs at least one real step")
        h_f = T.lstm(seq, mask, self.fwd.w_in, self.fwd.w_rec, self.fwd.bias, reverse=False)
        h_b = T.lstm(seq, mask, self.bwd.w_in, self.bwd.w_rec, self.bwd.bias, reverse=True)
        return T.concat([h_f, h_b], axis=-1)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ShapeMismatch(f"model dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def _split(self, x):
        B, L, _ = x.shape
        return T.transpose(T.reshape(x, (B, L, self.heads, self.dim // self.heads)), (0, 2, 1, 3))

    def __call__(self, query, key, value, key_mask, return_weights: bool = False):
        B, Tq, D = query.shape
        Tk = key.shape[1]
        if key.shape != value.shape or D != self.dim or key.shape[0] != B or key.shape[2] != D:
            raise ShapeMismatch("attention inputs have inconsistent shapes")
        key_mask = np.asarray(key_mask, dtype=bool).reshape(B, Tk)
        if not key_mask.any(axis=1).all():
            raise AllKeysMasked("a query has no unmasked key")
        q = self._split(self.q(query))
        k = self._split(self.k(key))
        v = self._split(self.v(value))
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.dim // self.heads))
        weights = T.softmax(scores, mask=key_mask[:, None, None, :])
        ctx = T.reshape(T.transpose(T.matmul(weights, v), (0, 2, 1, 3)), (B, Tq, D))
        out = self.out(ctx)
        return (out, weights) if return_weights else out


class TransformerBlock(Module):
    """Post-norm block: LN(x + MHA(x, kv)) then LN(h + FFN(h))."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.ffn = MLP([dim, ffn_dim, dim], rng, final_activation=False)
        self.norm2 = LayerNorm(dim)

    def __call__(self, query, key, value, key_mask) -> Tensor:
        h = self.norm1(T.add(query, self.attn(query, key, value, key_mask)))
        return self.norm2(T.add(h, self.ffn(h)))


def sinusoidal_encoding(offsets, dim: int) -> np.ndarray:
    """Fixed sin/cos features of integer day offsets, shape offsets.shape + (dim,)."""
    offsets = np.asarray(offsets, dtype=np.float64)
    i = np.arange(dim // 2, dtype=np.float64)
    freq = 1.0 / (10000.0 ** (2.0 * i / dim))
    angles = offsets[..., None] * freq
    pe = np.zeros(offsets.shape + (dim,))
    pe[..., 0::2] = np.sin(angles)
    pe[..., 1::2] = np.cos(angles[..., : dim - dim // 2])
    return pe
