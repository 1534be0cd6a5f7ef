"""Adam with bias correction and decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NoGradients
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    wd: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(state: AdamState, parameters) -> None:
    """One in-place update of `parameters` (iterable of Tensor or (name, Tensor)).

    Weight decay shrinks the parameter directly (p -= lr*wd*p) before the
    moment-based step. Gradients are cleared afterwards.
    """
    params = [p[1] if isinstance(p, tuple) else p for p in parameters]
    if not any(p.grad is not None for p in params):
        raise NoGradients("adam_step called before backward()")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if k not in state.m:
            state.m[k] = np.zeros_like(p.data)
            state.v[k] = np.zeros_like(p.data)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.wd:
            p.data -= state.lr * state.wd * p.data
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


def zero_grad(parameters) -> None:
    for p in parameters:
        p = p[1] if isinstance(p, tuple) else p
        if isinstance(p, Tensor):
            p.grad = None
