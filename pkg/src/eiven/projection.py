"""Learnable projection aligning visual features with the text embedding width."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .errors import ShapeError
from .vision import MGVFEmbedding


class ProjectionNet:
    """Two-layer gated bottleneck: down to 2*hidden, gate, up to the LM width.

    All four tensors are trainable in every run; weights use scaled-normal
    init and biases start at zero.
    """

    def __init__(self, in_width, hidden, out_width, seed=0, dtype=np.float32):
        rng = nn.seeded_rng(seed, 4)
        self.in_width = in_width
        self.hidden = hidden
        self.out_width = out_width
        self.w_down = nn.normal_param(rng, (in_width, 2 * hidden), True, dtype)
        self.b_down = nn.const_param(0.0, (2 * hidden,), True, dtype)
        self.w_up = nn.normal_param(rng, (hidden, out_width), True, dtype)
        self.b_up = nn.const_param(0.0, (out_width,), True, dtype)

    def named_tensors(self, prefix="projection"):
        yield f"{prefix}.w_down", self.w_down
        yield f"{prefix}.b_down", self.b_down
        yield f"{prefix}.w_up", self.w_up
        yield f"{prefix}.b_up", self.b_up

    @property
    def param_count(self):
        return sum(t.size for _, t in self.named_tensors())

    def project(self, mgvf) -> Tensor:
        """Row-wise: gate(x W_down + b_down) W_up + b_up."""
        x = mgvf
        if isinstance(mgvf, MGVFEmbedding):
            x = Tensor(mgvf.rows.astype(self.w_down.dtype))
        if x.shape[-1] != self.in_width:
            raise ShapeError(f"feature width {x.shape[-1]} != projection input {self.in_width}")
        gated = ag.silu_gate(nn.linear(x, self.w_down, self.b_down))
        return nn.linear(gated, self.w_up, self.b_up)
