"""Byte-level decoder-only language model with bottleneck adapters.

The base transformer is frozen; per-block adapters sit between the first
layer norm and the attention projections, so purely linear adapter kinds
can later be folded into the attention weights (see merge_linear_adapter).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .config import AdapterSpec, LMConfig
from .errors import MergeUnsupportedError, ShapeError

# Byte-level vocabulary: ids 0..255 are raw bytes, then the specials.
BOS = 256
EOS = 257
PAD = 258
VOCAB_SIZE = 259


def tokenize(text: str) -> list[int]:
    """UTF-8 bytes as ids; no specials added."""
    return list(text.encode("utf-8"))


def detokenize(ids) -> str:
    """Bytes back to text; specials are dropped, invalid UTF-8 replaced."""
    return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")


@dataclass
class PromptSequence:
    """One assembled model input.

    Positions run BOS, n_visual visual tokens, then the text ids (which
    start after BOS in token_ids). answer_span indexes positions of the
    full sequence; the loss mask covers the span plus the closing EOS.
    visual_source holds raw (n_visual, D_enc) encoder rows so the
    trainable projection can run inside the training graph, or None when
    the image modality is dropped (token count is preserved with zeros).
    """

    token_ids: np.ndarray  # int64, starts with BOS
    n_visual: int
    visual_source: np.ndarray | None
    answer_start: int = 0
    answer_end: int = 0

    @property
    def length(self):
        return self.n_visual + len(self.token_ids)

    def full_ids(self):
        """Token ids laid out over full positions; visual slots read PAD."""
        out = np.full(self.length, PAD, dtype=np.int64)
        out[0] = self.token_ids[0]
        out[self.n_visual + 1 :] = self.token_ids[1:]
        return out

    def loss_mask(self):
        """True where the *target* (next token) is an answer token or EOS."""
        mask = np.zeros(self.length, dtype=bool)
        if self.answer_end > self.answer_start:
            mask[self.answer_start - 1 : self.answer_end] = True
        return mask


class Adapter:
    """Residual bottleneck h + up(act(down(h))).

    The up map starts at zero, so a fresh adapter is an exact identity.
    For the sparse kind the up map is block-diagonal: group i of the
    bottleneck feeds only slice i of the output width.
    """

    def __init__(self, spec: AdapterSpec, width, rng, dtype=np.float32):
        spec.validate(width)
        self.spec = spec
        self.width = width
        self.down_w = nn.normal_param(rng, (width, spec.r), True, dtype)
        self.down_b = nn.const_param(0.0, (spec.r,), True, dtype)
        if spec.is_sparse:
            g = spec.groups
            self.up_blocks = [
                nn.const_param(0.0, (spec.r // g, width // g), True, dtype)
                for _ in range(g)
            ]
            self.up_w = None
        else:
            self.up_blocks = None
            self.up_w = nn.const_param(0.0, (spec.r, width), True, dtype)
        self.up_b = nn.const_param(0.0, (width,), True, dtype)

    def named_tensors(self, prefix):
        yield f"{prefix}.down_w", self.down_w
        yield f"{prefix}.down_b", self.down_b
        if self.up_blocks is not None:
            for i, block in enumerate(self.up_blocks):
                yield f"{prefix}.up_block{i}", block
        else:
            yield f"{prefix}.up_w", self.up_w
        yield f"{prefix}.up_b", self.up_b

    def __call__(self, h):
        if h.shape[-1] != self.width:
            raise ShapeError(f"adapter width {self.width} != input width {h.shape[-1]}")
        z = nn.linear(h, self.down_w, self.down_b)
        if self.spec.kind == "mlp_nonlinear":
            z = ag.silu(z)
        if self.up_blocks is not None:
            rg = self.spec.r // self.spec.groups
            parts = [
                ag.matmul(ag.narrow(z, -1, i * rg, rg), block)
                for i, block in enumerate(self.up_blocks)
            ]
            up = ag.add(ag.concat(parts, axis=-1), self.up_b)
        else:
            up = nn.linear(z, self.up_w, self.up_b)
        return ag.add(h, up)

    def dense_up(self) -> np.ndarray:
        """The up map as a dense (r, width) matrix."""
        if self.up_blocks is None:
            return self.up_w.data
        r, g = self.spec.r, self.spec.groups
        rg, wg = r // g, self.width // g
        dense = np.zeros((r, self.width), dtype=self.down_w.dtype)
        for i, block in enumerate(self.up_blocks):
            dense[i * rg : (i + 1) * rg, i * wg : (i + 1) * wg] = block.data
        return dense

    def affine_map(self):
        """(A, c) with adapter(h) == h @ A + c; only valid for linear kinds."""
        if not self.spec.is_linear:
            raise MergeUnsupportedError(
                f"adapter kind {self.spec.kind!r} is nonlinear and cannot be merged"
            )
        up = self.dense_up()
        a = np.eye(self.width, dtype=self.down_w.dtype) + self.down_w.data @ up
        c = self.down_b.data @ up + self.up_b.data
        return a, c


class DecoderLM:
    """Frozen causal transformer over the byte vocabulary.

    Visual tokens, when present, sit right after BOS; they bypass the token
    embedding table but still receive position embeddings.
    """

    def __init__(self, cfg: LMConfig, adapter_spec=None, seed=0, adapter_seed=0,
                 dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = nn.seeded_rng(seed, 2)
        std = 1.0 / np.sqrt(cfg.width)
        self.token_emb = nn.normal_param(rng, (cfg.vocab, cfg.width), False, dtype, std=std)
        self.pos_emb = nn.normal_param(rng, (cfg.context, cfg.width), False, dtype, std=std)
        self.blocks = [
            nn.TransformerBlock(cfg.width, cfg.heads, cfg.mlp_hidden, rng, dtype=dtype)
            for _ in range(cfg.blocks)
        ]
        self.ln_f_g = nn.const_param(1.0, (cfg.width,), False, dtype)
        self.ln_f_b = nn.const_param(0.0, (cfg.width,), False, dtype)
        self.head_w = nn.normal_param(rng, (cfg.width, cfg.vocab), False, dtype)
        self.head_b = nn.const_param(0.0, (cfg.vocab,), False, dtype)
        self.adapters = None
        if adapter_spec is not None:
            arng = nn.seeded_rng(adapter_seed, 3)
            self.adapters = [
                Adapter(adapter_spec, cfg.width, arng, dtype) for _ in range(cfg.blocks)
            ]

    def base_named_tensors(self, prefix="lm"):
        yield f"{prefix}.token_emb", self.token_emb
        yield f"{prefix}.pos_emb", self.pos_emb
        for i, block in enumerate(self.blocks):
            yield from block.named_tensors(f"{prefix}.blocks.{i}")
        yield f"{prefix}.ln_f_g", self.ln_f_g
        yield f"{prefix}.ln_f_b", self.ln_f_b
        yield f"{prefix}.head_w", self.head_w
        yield f"{prefix}.head_b", self.head_b

    def adapter_named_tensors(self, prefix="adapters"):
        if self.adapters is None:
            return
        for i, adapter in enumerate(self.adapters):
            yield from adapter.named_tensors(f"{prefix}.{i}")

    def embed_sequence(self, visual, ids):
        """BOS embedding, visual rows, then embedded text ids, plus positions.

        visual is a Tensor (..., n_vis, width) or None; ids is an int array
        (..., T_text) whose first column is BOS.
        """
        ids = np.asarray(ids, dtype=np.int64)
        tok = ag.embedding(self.token_emb, ids)
        if visual is not None and visual.shape[-2] > 0:
            bos = ag.narrow(tok, -2, 0, 1)
            rest = ag.narrow(tok, -2, 1, ids.shape[-1] - 1)
            x = ag.concat([bos, visual, rest], axis=-2)
        else:
            x = tok
        t = x.shape[-2]
        if t > self.cfg.context:
            raise ShapeError(
                f"sequence length {t} exceeds context window {self.cfg.context}"
            )
        return ag.add(x, Tensor(self.pos_emb.data[:t]))

    def forward(self, visual, ids) -> Tensor:
        """Next-token logits at every position; causal attention throughout."""
        x = self.embed_sequence(visual, ids)
        mask = nn.causal_mask(x.shape[-2], dtype=self.dtype)
        for i, block in enumerate(self.blocks):
            adapter = self.adapters[i] if self.adapters is not None else None
            x = block(x, mask=mask, adapter=adapter)
        x = ag.layer_norm(x, self.ln_f_g, self.ln_f_b)
        return nn.linear(x, self.head_w, self.head_b)


def merge_linear_adapter(model: DecoderLM) -> DecoderLM:
    """Fold linear adapters into the attention input projections.

    Since the adapter acts on the normalized state feeding q/k/v, the
    composite affine map (A, c) rewrites each projection as
    W' = A @ W and b' = c @ W + b. The returned model has no adapters.
    """
    merged = DecoderLM(model.cfg, adapter_spec=None, dtype=model.dtype)
    for (_, src), (_, dst) in zip(model.base_named_tensors(), merged.base_named_tensors()):
        dst.data = src.data.copy()
    if model.adapters is not None:
        for block, adapter in zip(merged.blocks, model.adapters):
            a, c = adapter.affine_map()
            for w_name, b_name in (("wq", "bq"), ("wk", "bk"), ("wv", "bv")):
                w = getattr(block, w_name)
                b = getattr(block, b_name)
                b.data = c @ w.data + b.data
                w.data = a @ w.data
    return merged


def count_trainable(model: DecoderLM, projection=None) -> int:
    """Exact number of unfrozen parameters (adapters plus projection)."""
    total = sum(t.size for _, t in model.adapter_named_tensors())
    if projection is not None:
        total += sum(t.size for _, t in projection.named_tensors())
    return total


def count_total(model: DecoderLM, projection=None, vision=None) -> int:
    total = sum(t.size for _, t in model.base_named_tensors())
    total += sum(t.size for _, t in model.adapter_named_tensors())
    if projection is not None:
        total += sum(t.size for _, t in projection.named_tensors())
    if vision is not None:
        total += sum(t.size for _, t in vision.named_tensors())
    return total
