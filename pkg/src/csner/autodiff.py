"""Dense tensors with reverse-mode differentiation.

A deliberately small engine: each operation records a closure that
propagates the output gradient to its parents, and ``backward`` replays
the tape in reverse topological order.  Values are numpy arrays of
whatever float dtype the caller builds them with (float64 in tests,
float32 in production training).

A tape belongs to one thread; run concurrent models on separate
instances.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    """A NaN or infinity reached the optimizer."""


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording (inference, finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"


def tensor(data, requires_grad=False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _make(data, parents, backward) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


def _accum(p: Tensor, g):
    if p.requires_grad:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        p.grad += g


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(root: Tensor, seed=None):
    """Accumulate d(root)/d(leaf) into each reachable leaf's ``.grad``."""
    if seed is None:
        seed = np.ones_like(root.data)
    # iterative topological order; graphs grow linearly with sequence length
    order = []
    visited = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited and p.requires_grad:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    if root.grad is None:
        root.grad = np.zeros_like(root.data)
    root.grad += seed
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitive operations


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b with a of shape (..., k) and b a 2-D (k, m) matrix."""
    if b.data.ndim != 2 or a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shapes {a.data.shape} and {b.data.shape}")
    data = a.data @ b.data
    k, m = b.data.shape

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.reshape(-1, k).T @ g.reshape(-1, m))

    return _make(data, (a, b), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            _accum(t, piece)

    return _make(data, tuple(tensors), bw)


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * t.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    data = t.data[index]

    def bw(g):
        if t.requires_grad:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad[index] += g

    return _make(data, (t,), bw)


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        _accum(t, g * out * (1.0 - out))

    return _make(out, (t,), bw)


def tanh(t: Tensor) -> Tensor:
    out = np.tanh(t.data)

    def bw(g):
        _accum(t, g * (1.0 - out * out))

    return _make(out, (t,), bw)


def sum_all(t: Tensor) -> Tensor:
    data = np.asarray(t.data.sum())

    def bw(g):
        _accum(t, np.broadcast_to(g, t.data.shape))

    return _make(data, (t,), bw)


def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row gather; gradients scatter-add back into the table."""
    data = table.data[indices]

    def bw(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(
                table.grad,
                indices.reshape(-1),
                g.reshape(-1, table.data.shape[1]),
            )

    return _make(data, (table,), bw)


def dropout(t: Tensor, rate: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return t
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(t.data.shape) >= rate).astype(t.data.dtype)
    mask = keep / np.asarray(1.0 - rate, dtype=t.data.dtype)
    return mul(t, Tensor(mask))


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    z = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accum(t, (g - inner) * out)

    return _make(out, (t,), bw)


def masked_cross_entropy(probs: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log probability of the target over unmasked steps.

    ``probs`` holds probabilities (last axis over tags); ``targets`` and
    ``mask`` share its leading shape.  Padding steps (mask 0) contribute
    nothing to either the value or the gradient.
    """
    total = float(mask.sum())
    if total == 0:
        raise ValueError("mask selects no positions")
    gathered = np.take_along_axis(probs.data, targets[..., None], axis=-1)[..., 0]
    logp = np.where(mask > 0, np.log(np.where(mask > 0, gathered, 1.0)), 0.0)
    data = np.asarray(-(logp * mask).sum() / total, dtype=probs.data.dtype)

    def bw(g):
        if probs.requires_grad:
            dp = np.zeros_like(probs.data)
            denom = np.where(mask > 0, gathered * total, 1.0)
            np.put_along_axis(
                dp,
                targets[..., None],
                np.where(mask > 0, -mask / denom, 0.0)[..., None],
                axis=-1,
            )
            _accum(probs, g * dp)

    return _make(data, (probs,), bw)


def masked_cross_entropy_logits(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Fused log-softmax cross-entropy; the stable path used in training."""
    total = float(mask.sum())
    if total == 0:
        raise ValueError("mask selects no positions")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    sums = e.sum(axis=-1, keepdims=True)
    logp = z - np.log(sums)
    gathered = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    data = np.asarray(-(gathered * mask).sum() / total, dtype=logits.data.dtype)

    def bw(g):
        if logits.requires_grad:
            dz = e / sums
            np.put_along_axis(
                dz,
                targets[..., None],
                np.take_along_axis(dz, targets[..., None], axis=-1) - 1.0,
                axis=-1,
            )
            dz *= (mask * (g / total))[..., None]
            _accum(logits, dz)

    return _make(data, (logits,), bw)


# ---------------------------------------------------------------------------
# LSTM cell


@dataclass
class LstmParams:
    """One direction's weights; gate columns are blocked [input | forget |
    candidate | output]."""

    wx: Tensor  # input_size x 4*hidden
    wh: Tensor  # hidden x 4*hidden
    b: Tensor  # 4*hidden
    input_size: int
    hidden_size: int

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.wx": self.wx, f"{prefix}.wh": self.wh, f"{prefix}.b": self.b}


@dataclass
class LstmState:
    h: Tensor
    c: Tensor


def init_lstm(input_size: int, hidden_size: int, rng, dtype, scale: float = 0.1,
              forget_bias: float = 1.0) -> LstmParams:
    wx = param(rng.uniform(-scale, scale, (input_size, 4 * hidden_size)).astype(dtype))
    wh = param(rng.uniform(-scale, scale, (hidden_size, 4 * hidden_size)).astype(dtype))
    b_data = rng.uniform(-scale, scale, 4 * hidden_size).astype(dtype)
    b_data[hidden_size : 2 * hidden_size] = forget_bias
    return LstmParams(wx, wh, param(b_data), input_size, hidden_size)


def zero_state(batch: int, hidden_size: int, dtype) -> LstmState:
    return LstmState(
        Tensor(np.zeros((batch, hidden_size), dtype=dtype)),
        Tensor(np.zeros((batch, hidden_size), dtype=dtype)),
    )


def lstm_step(x: Tensor, prev: LstmState, p: LstmParams) -> LstmState:
    """Standard gated update: c' = f*c + i*g, h' = o*tanh(c')."""
    if x.data.shape[-1] != p.input_size:
        raise ValueError(f"input width {x.data.shape[-1]}, expected {p.input_size}")
    n = p.hidden_size
    z = add(add(matmul(x, p.wx), matmul(prev.h, p.wh)), p.b)
    i = sigmoid(slice_axis(z, -1, 0, n))
    f = sigmoid(slice_axis(z, -1, n, 2 * n))
    g = tanh(slice_axis(z, -1, 2 * n, 3 * n))
    o = sigmoid(slice_axis(z, -1, 3 * n, 4 * n))
    c = add(mul(f, prev.c), mul(i, g))
    h = mul(o, tanh(c))
    return LstmState(h, c)


def masked_state(new: LstmState, prev: LstmState, mask: np.ndarray) -> LstmState:
    """Keep the previous state where mask is 0 (padding steps)."""
    m = Tensor(mask)
    inv = Tensor(1.0 - mask)
    return LstmState(
        add(mul(new.h, m), mul(prev.h, inv)),
        add(mul(new.c, m), mul(prev.c, inv)),
    )


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """One Adam update with bias correction, in place.

    Parameters with no accumulated gradient are treated as having zero
    gradient.  Raises NonFiniteGradient before touching anything if any
    gradient is NaN or infinite.
    """
    for name, p in params.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# verification


def finite_diff_check(loss_fn, params: dict[str, Tensor], h: float = 1e-4,
                      floor: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must be deterministic and return a scalar Tensor.  The
    relative error denominator is floored at ``floor`` so near-zero
    gradients are compared absolutely.  Run in float64.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    zero_grads(params)
    loss = loss_fn()
    backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    worst = 0.0
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            ana = analytic[name].reshape(-1)
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + h
                up = float(loss_fn().data)
                flat[i] = saved - h
                down = float(loss_fn().data)
                flat[i] = saved
                numeric = (up - down) / (2.0 * h)
                err = abs(ana[i] - numeric) / max(abs(ana[i]), abs(numeric), floor)
                worst = max(worst, err)
    return worst
