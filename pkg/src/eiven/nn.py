"""Parameter initialization and the transformer block shared by both towers."""

from __future__ import annotations

import hashlib

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def seeded_rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def normal_param(rng, shape, trainable, dtype=np.float32, std=None):
    if std is None:
        std = 1.0 / np.sqrt(shape[0])  # fan_in for (in, out) weight matrices
    data = (rng.standard_normal(shape) * std).astype(dtype)
    return Tensor(data, requires_grad=trainable, frozen=not trainable)


def const_param(value, shape, trainable, dtype=np.float32):
    data = np.full(shape, value, dtype=dtype)
    return Tensor(data, requires_grad=trainable, frozen=not trainable)


def linear(x, w, b):
    return ag.add(ag.matmul(x, w), b)


class TransformerBlock:
    """Pre-layer-norm block: attention then gated-SiLU MLP, both residual.

    An optional adapter hook runs on the normalized hidden state right
    before the attention projections.
    """

    PARAM_NAMES = (
        "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
        "ln2_g", "ln2_b", "mlp_in_w", "mlp_in_b", "mlp_out_w", "mlp_out_b",
    )

    def __init__(self, width, heads, mlp_hidden, rng, trainable=False, dtype=np.float32):
        if width % heads:
            raise ValueError("width must be divisible by heads")
        self.width = width
        self.heads = heads
        mk_w = lambda shape: normal_param(rng, shape, trainable, dtype)
        self.ln1_g = const_param(1.0, (width,), trainable, dtype)
        self.ln1_b = const_param(0.0, (width,), trainable, dtype)
        self.wq = mk_w((width, width))
        self.bq = const_param(0.0, (width,), trainable, dtype)
        self.wk = mk_w((width, width))
        self.bk = const_param(0.0, (width,), trainable, dtype)
        self.wv = mk_w((width, width))
        self.bv = const_param(0.0, (width,), trainable, dtype)
        self.wo = mk_w((width, width))
        self.bo = const_param(0.0, (width,), trainable, dtype)
        self.ln2_g = const_param(1.0, (width,), trainable, dtype)
        self.ln2_b = const_param(0.0, (width,), trainable, dtype)
        self.mlp_in_w = mk_w((width, 2 * mlp_hidden))
        self.mlp_in_b = const_param(0.0, (2 * mlp_hidden,), trainable, dtype)
        self.mlp_out_w = mk_w((mlp_hidden, width))
        self.mlp_out_b = const_param(0.0, (width,), trainable, dtype)

    def named_tensors(self, prefix):
        for name in self.PARAM_NAMES:
            yield f"{prefix}.{name}", getattr(self, name)

    def attention(self, a, mask):
        """Multi-head self-attention on (..., T, width)."""
        h = self.heads
        t = a.shape[-2]
        dh = self.width // h
        q = linear(a, self.wq, self.bq)
        k = linear(a, self.wk, self.bk)
        v = linear(a, self.wv, self.bv)
        batch = a.shape[:-2]
        split = lambda z: ag.swap_axes(ag.reshape(z, batch + (t, h, dh)), -3, -2)
        q, k, v = split(q), split(k), split(v)
        scores = ag.mul(ag.matmul(q, ag.swap_last(k)), 1.0 / np.sqrt(dh))
        if mask is not None:
            scores = ag.add(scores, mask)
        mixed = ag.matmul(ag.softmax_last(scores), v)
        merged = ag.reshape(ag.swap_axes(mixed, -3, -2), batch + (t, self.width))
        return linear(merged, self.wo, self.bo)

    def __call__(self, x, mask=None, adapter=None):
        a = ag.layer_norm(x, self.ln1_g, self.ln1_b)
        if adapter is not None:
            a = adapter(a)
        x = ag.add(x, self.attention(a, mask))
        m = ag.layer_norm(x, self.ln2_g, self.ln2_b)
        m = linear(ag.silu_gate(linear(m, self.mlp_in_w, self.mlp_in_b)), self.mlp_out_w, self.mlp_out_b)
        return ag.add(x, m)


def causal_mask(t, dtype=np.float32):
    """Additive mask: large negative above the diagonal."""
    m = np.triu(np.full((t, t), -1e9, dtype=dtype), k=1)
    return Tensor(m)


def weights_digest(named_tensors):
    """Byte digest over (name, data) pairs; order-independent."""
    h = hashlib.sha256()
    for name, t in sorted(named_tensors, key=lambda kv: kv[0]):
        h.update(name.encode("utf-8"))
        h.update(t.data.tobytes())
    return h.hexdigest()
