"""Independent reference implementations used as test oracles.

Nothing here imports model internals: each oracle re-derives the expected
value from the definition (brute-force search, finite differences, a
hand-rolled optimizer step, direct exponentiation).
"""

from __future__ import annotations

import math

import numpy as np

# most specific -> least specific, spelled out independently of the package
HIERARCHY = [
    lambda inst_u, p: ("ucb", inst_u, p.category_id, p.brand_id),
    lambda inst_u, p: ("ub", inst_u, p.brand_id),
    lambda inst_u, p: ("uc", inst_u, p.category_id),
    lambda inst_u, p: ("u", inst_u),
    lambda inst_u, p: ("cb", p.category_id, p.brand_id),
    lambda inst_u, p: ("b", p.brand_id),
]


def mode_with_tiebreak(labels):
    """Most frequent label; ties go to the lowest label. Pure brute force."""
    best, best_count = None, -1
    for cand in sorted(set(labels)):
        c = sum(1 for x in labels if x == cand)
        if c > best_count:
            best, best_count = cand, c
    return best


def pmcv_rank1_oracle(train, user_id, product, n_feasible):
    """Walk the key hierarchy over the raw training list; first key with a feasible label wins."""
    for key_fn in HIERARCHY:
        want = key_fn(user_id, product)
        labels = [i.label for i in train if key_fn(i.user_id, i.product) == want and i.label < n_feasible]
        if labels:
            return mode_with_tiebreak(labels)
    labels = [i.label for i in train if i.label < n_feasible]
    return mode_with_tiebreak(labels) if labels else 0


def softmax_oracle(x, mask=None):
    x = [float(v) for v in x]
    keep = [True] * len(x) if mask is None else list(mask)
    exps = [math.exp(v) if k else 0.0 for v, k in zip(x, keep)]
    s = sum(exps)
    return [e / s for e in exps]


def adam_scalar_oracle(x0, grads, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    """Textbook Adam with decoupled decay on a scalar, returns the trajectory."""
    x, m, v, out = x0, 0.0, 0.0, []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * wd * x
        x = x - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(x)
    return out


def rel_error(a, n, floor=1e-5):
    """|a - n| / max(|a|, |n|, floor). The floor keeps true-zero gradients from
    turning finite-difference rounding noise (~1e-11) into huge ratios."""
    a, n = np.asarray(a, float), np.asarray(n, float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(loss_fn, param, eps=1e-5, max_entries=None, rng=None, frozen=None):
    """Central differences of a scalar loss_fn() w.r.t. param.data (entries subsampled if asked).

    `frozen` is a boolean mask of entries that are constants by design (padding rows) and are skipped.
    """
    flat = param.data.reshape(-1)
    idx = np.arange(flat.size) if frozen is None else np.flatnonzero(~np.asarray(frozen).reshape(-1))
    if max_entries is not None and idx.size > max_entries:
        rng = rng or np.random.default_rng(0)
        idx = np.sort(rng.choice(idx, size=max_entries, replace=False))
    out = np.zeros(idx.size)
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + eps
        up = loss_fn()
        flat[i] = old - eps
        down = loss_fn()
        flat[i] = old
        out[j] = (up - down) / (2 * eps)
    return idx, out


def padding_rows(params, prefix=""):
    """Frozen masks marking row 0 of every parameter whose name starts with `prefix` (embedding tables)."""
    out = {}
    for name, p in params.items():
        if name.startswith(prefix):
            mask = np.zeros(p.data.shape, bool)
            mask[0] = True
            out[name] = mask
    return out


def gradcheck(loss_tensor_fn, params, eps=1e-5, max_entries=40, seed=0, frozen=None):
    """Max relative error between autodiff and central differences over `params` (name -> Tensor)."""
    from sizerec import nncore as nn

    for p in params.values():
        p.grad = None
    loss = loss_tensor_fn()
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    def scalar():
        with nn.no_grad():
            return float(loss_tensor_fn().data)

    rng = np.random.default_rng(seed)
    worst, where = 0.0, None
    for name, p in params.items():
        idx, num = numeric_grad(scalar, p, eps, max_entries, rng, (frozen or {}).get(name))
        err = rel_error(analytic[name].reshape(-1)[idx], num)
        if err.size and err.max() > worst:
            worst, where = float(err.max()), name
    return worst, where
