"""Reverse-mode autodiff on numpy arrays.

Every model in this package is built from the small op set below. Ops
record a backward closure only when some input requires a gradient, so
forward passes through frozen components build no graph at all.

float32 is the working precision; gradient-check code constructs float64
tensors instead (ops preserve the dtype of their inputs).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit as _sigmoid

from .errors import DegenerateLossError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """Dense float array plus accumulated gradient.

    frozen marks backbone weights: they never require a gradient and an
    optimizer must never touch them.
    """

    __slots__ = ("data", "grad", "requires_grad", "frozen", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, frozen=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if frozen and requires_grad:
            raise ValueError("frozen tensors cannot require gradients")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.frozen = bool(frozen)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = " frozen" if self.frozen else (" grad" if self.requires_grad else "")
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # Arithmetic sugar; the module-level functions do the work.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swap_last(self):
        return swap_last(self)

    def sum(self):
        return reduce_sum(self)

    def mean(self):
        return reduce_mean(self)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward):
    """Wrap an op result, recording the graph only if a parent needs it."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        # copy: g may alias the child's grad buffer via _unbroadcast
        t.grad = np.array(g, dtype=t.dtype)
    else:
        t.grad += g


def _unbroadcast(grad, shape):
    """Sum grad down to shape, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def matmul(a, b):
    """Matrix product with numpy batching over leading dimensions."""
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")

    def backward(g):
        _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), backward)


def swap_last(x):
    """Transpose the trailing two axes."""

    def backward(g):
        _accum(x, np.swapaxes(g, -1, -2))

    return _make(np.swapaxes(x.data, -1, -2), (x,), backward)


def swap_axes(x, a, b):
    def backward(g):
        _accum(x, np.swapaxes(g, a, b))

    return _make(np.swapaxes(x.data, a, b), (x,), backward)


def reshape(x, shape):
    old = x.shape

    def backward(g):
        _accum(x, g.reshape(old))

    return _make(x.data.reshape(shape), (x,), backward)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def narrow(x, axis, start, length):
    """Slice length elements along axis starting at start."""
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[index] = g
            _accum(x, full)

    return _make(x.data[index], (x,), backward)


def embedding(table, ids):
    """Row lookup: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"token id out of range for table with {table.shape[0]} rows")

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
            _accum(table, gt)

    return _make(table.data[ids], (table,), backward)


def silu(x):
    s = _sigmoid(x.data)
    out = x.data * s

    def backward(g):
        _accum(x, g * (s * (1.0 + x.data * (1.0 - s))))

    return _make(out, (x,), backward)


def silu_gate(x):
    """Split the last dim in half and return SiLU(first) * second."""
    d2 = x.shape[-1]
    if d2 % 2:
        raise ShapeError(f"silu_gate needs an even last dimension, got {d2}")
    h = d2 // 2
    a = x.data[..., :h]
    b = x.data[..., h:]
    s = _sigmoid(a)
    sa = a * s

    def backward(g):
        ga = g * b * (s * (1.0 + a * (1.0 - s)))
        gb = g * sa
        _accum(x, np.concatenate([ga, gb], axis=-1))

    return _make(sa * b, (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Zero-mean unit-variance normalization over the last dim, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv

    def backward(g):
        gx = g * gain.data
        if x.requires_grad:
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accum(x, (gx - m1 - xhat * m2) * inv)
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, x.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, x.shape[-1]).sum(axis=0))

    return _make(xhat * gain.data + bias.data, (x, gain, bias), backward)


def softmax_last(x):
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        _accum(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _make(y, (x,), backward)


def cross_entropy_masked(logits, targets, mask):
    """Mean of -log softmax(logits)[target] over masked positions.

    logits is (..., T, V); targets and mask are integer/boolean (..., T).
    Each row (sequence) is averaged over its own masked positions, then
    rows are averaged, so sequences with different answer lengths weigh
    equally. Unmasked positions contribute neither loss nor gradient.
    """
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if targets.shape != logits.shape[:-1] or mask.shape != logits.shape[:-1]:
        raise ShapeError(
            f"targets/mask shape {targets.shape}/{mask.shape} does not match "
            f"logits {logits.shape}"
        )
    v = logits.shape[-1]
    if mask.any() and (targets[mask].min() < 0 or targets[mask].max() >= v):
        raise ShapeError(f"target id out of range for vocabulary of {v}")
    counts = mask.sum(axis=-1)
    if not counts.all():
        raise DegenerateLossError("loss mask selects no positions in some sequence")

    m = logits.data.max(axis=-1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1)) + m[..., 0]
    picked = np.take_along_axis(logits.data, targets[..., None], axis=-1)[..., 0]
    nll = np.where(mask, lse - picked, 0.0)
    per_row = nll.sum(axis=-1) / counts
    n_rows = max(per_row.size, 1)
    loss = per_row.mean() if per_row.ndim else per_row

    def backward(g):
        if not logits.requires_grad:
            return
        probs = np.exp(shifted)
        probs /= probs.sum(axis=-1, keepdims=True)
        np.subtract.at(probs, (*np.indices(targets.shape), targets), 1.0)
        scale = np.where(mask, 1.0 / counts[..., None], 0.0) / n_rows
        _accum(logits, (g * scale[..., None] * probs).astype(logits.dtype))

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def reduce_sum(x):
    def backward(g):
        _accum(x, np.broadcast_to(g, x.shape))

    return _make(x.data.sum(), (x,), backward)


def reduce_mean(x):
    n = x.data.size

    def backward(g):
        _accum(x, np.broadcast_to(g / n, x.shape))

    return _make(x.data.mean(), (x,), backward)


def backward(loss):
    """Populate grads for everything reachable from a scalar loss.

    Each graph node's backward closure runs exactly once, in reverse
    topological order.
    """
    if loss.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    topo = []
    seen = {id(loss)}
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                seen.add(id(parent))
                stack.append((parent, False))

    loss.grad = np.ones((), dtype=loss.dtype)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
