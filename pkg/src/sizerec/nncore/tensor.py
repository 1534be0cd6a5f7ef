"""Dense float64 tensors with reverse-mode automatic differentiation.

Each differentiable op returns a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients.
:meth:`Tensor.backward` walks that graph in reverse topological order.
Graph recording is skipped entirely inside :func:`no_grad` (per thread).
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from ..errors import (
    AllMasked,
    EmptySequence,
    IndexOutOfRange,
    InvalidLabel,
    NotAScalar,
    ShapeMismatch,
)

DTYPE = np.float64

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise NotAScalar(f"backward() needs a scalar, got shape {self.shape}")
        order = _topological(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# elementwise and shape ops
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    return _result(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    return _result(data, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # (..., n) @ (n, m): fold leading dims so both passes are single GEMMs
        a2 = a.data.reshape(-1, a.shape[-1])
        data = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return _result(data, (a, b), backward)
    data = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(data, (a, b), backward)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(data, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    return _result(data, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _result(data, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _result(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --------------------------------------------------------------------------
# normalisation, softmax and losses
# --------------------------------------------------------------------------

LN_EPS = 1e-9


def layer_norm(x, gamma=None, beta=None, eps: float = LN_EPS) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    parents = [x]
    y = xhat
    if gamma is not None:
        gamma, beta = as_tensor(gamma), as_tensor(beta)
        if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
            raise ShapeMismatch("layer_norm gain/bias must match the last axis")
        y = xhat * gamma.data + beta.data
        parents += [gamma, beta]

    def backward(g):
        gx_hat = g * gamma.data if gamma is not None else g
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        if gamma is None:
            return (gx,)
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _result(y, parents, backward)


def _check_mask(mask, shape):
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), shape)
    if not mask.any(axis=-1).all():
        raise AllMasked("every position of a softmax row is masked")
    return mask


def softmax(logits, mask=None, axis: int = -1) -> Tensor:
    """Softmax over the last axis; masked-out (False) entries are exactly 0."""
    logits = as_tensor(logits)
    if axis not in (-1, logits.ndim - 1):
        raise ValueError("softmax supports the last axis only")
    x = logits.data
    if mask is not None:
        mask = _check_mask(mask, x.shape)
        x = np.where(mask, x, -np.inf)
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (logits,), backward)


def log_softmax(logits, mask=None) -> Tensor:
    logits = as_tensor(logits)
    x = logits.data
    if mask is not None:
        mask = _check_mask(mask, x.shape)
        x = np.where(mask, x, -np.inf)
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def backward(g):
        g = np.where(np.isfinite(out), g, 0.0)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _result(out, (logits,), backward)


def _check_labels(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InvalidLabel(f"labels must lie in [0, {n_classes})")
    return labels


def cross_entropy(probabilities, labels) -> Tensor:
    """Mean of -log p[label] over rows of a probability matrix (or one vector)."""
    probs = as_tensor(probabilities)
    p2 = probs if probs.ndim == 2 else reshape(probs, (1, -1))
    labels = _check_labels(labels, p2.shape[-1])
    if labels.size != p2.shape[0]:
        raise ShapeMismatch("one label per row expected")
    picked = p2.data[np.arange(labels.size), labels]
    if np.any(picked <= 0):
        raise InvalidLabel("label has zero probability")
    loss = -np.log(picked).mean()

    def backward(g):
        grad = np.zeros_like(p2.data)
        grad[np.arange(labels.size), labels] = -g / (picked * labels.size)
        return (grad,)

    return _result(loss, (p2,), backward)


def softmax_cross_entropy(logits, labels, mask=None) -> Tensor:
    """Mean negative log-likelihood of masked-softmax(logits) at `labels`."""
    logits = as_tensor(logits)
    labels = _check_labels(labels, logits.shape[-1])
    logp = log_softmax(logits, mask)
    rows = np.arange(labels.size)
    picked = logp.data[rows, labels]
    if not np.all(np.isfinite(picked)):
        raise InvalidLabel("label falls on a masked position")

    def backward(g):
        grad = np.zeros_like(logp.data)
        grad[rows, labels] = -g / labels.size
        return (grad,)

    return _result(-picked.mean(), (logp,), backward)


# --------------------------------------------------------------------------
# lookup and recurrence
# --------------------------------------------------------------------------

def embedding(weight, ids, padding_idx: int | None = 0) -> Tensor:
    """Gather rows of `weight`; gradients scatter-add back, never into `padding_idx`."""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexOutOfRange(f"embedding id outside [0, {weight.shape[0]})")
    data = weight.data[ids]

    def backward(g):
        grad = np.zeros_like(weight.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        if padding_idx is not None:
            grad[padding_idx] = 0.0
        return (grad,)

    return _result(data, (weight,), backward)


def lstm(x, mask, w_in, w_rec, bias, reverse: bool = False) -> Tensor:
    """Run one LSTM direction over `x` [B, T, D]; return the final hidden state [B, H].

    Steps where ``mask`` is False leave (h, c) untouched, so padded steps
    never influence the result. Gate order in the 4H axis: input, forget,
    cell, output.
    """
    x, w_in, w_rec, bias = (as_tensor(t) for t in (x, w_in, w_rec, bias))
    if x.ndim != 3:
        raise ShapeMismatch(f"lstm expects [B, T, D], got {x.shape}")
    B, T, D = x.shape
    if T == 0:
        raise EmptySequence("lstm over an empty sequence")
    H = w_rec.shape[0]
    if w_in.shape != (D, 4 * H) or w_rec.shape != (H, 4 * H) or bias.shape != (4 * H,):
        raise ShapeMismatch("lstm weight shapes do not match input")
    m = np.asarray(mask, dtype=bool).reshape(B, T)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    tape = []
    W, U, b = w_in.data, w_rec.data, bias.data
    for t in steps:
        xt = x.data[:, t, :]
        z = xt @ W + h @ U + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        mt = m[:, t:t + 1]
        tape.append((t, h, c, i, f, g, o, tc, mt))
        c = np.where(mt, c_new, c)
        h = np.where(mt, h_new, h)

    def backward(gh):
        gW = np.zeros_like(W)
        gU = np.zeros_like(U)
        gb = np.zeros_like(b)
        gx = np.zeros_like(x.data)
        dh = gh
        dc = np.zeros((B, H))
        for t, h_prev, c_prev, i, f, g, o, tc, mt in reversed(tape):
            dh_new = np.where(mt, dh, 0.0)
            dc_new = np.where(mt, dc, 0.0) + dh_new * o * (1.0 - tc * tc)
            do = dh_new * tc
            di = dc_new * g
            dg = dc_new * i
            df = dc_new * c_prev
            dz = np.concatenate(
                [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)], axis=1)
            gW += x.data[:, t, :].T @ dz
            gU += h_prev.T @ dz
            gb += dz.sum(axis=0)
            gx[:, t, :] = dz @ W.T
            dh = dz @ U.T + np.where(mt, 0.0, dh)
            dc = dc_new * f + np.where(mt, 0.0, dc)
        return gx, gW, gU, gb

    return _result(h, (x, w_in, w_rec, bias), backward)
