"""Toy vision transformer emitting multi-granularity visual features.

The encoder is frozen at a seeded random initialization: every claim made
downstream is architectural, not representational. Hidden states of the
leading [cls] token are collected after each configured layer and stacked
into one feature matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor
from .config import EncoderConfig
from .errors import ConfigError, ShapeError


@dataclass
class ImageGrid:
    """Square RGB image with 8-bit channels."""

    width: int
    height: int
    pixels: np.ndarray  # (H, W, 3) uint8
    channels: int = 3

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, 3):
            raise ShapeError(
                f"pixel block {self.pixels.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        if self.width != self.height:
            raise ShapeError("images must be square")


@dataclass
class MGVFEmbedding:
    """Stacked [cls] states, one row per extraction layer."""

    rows: np.ndarray  # (K, D)

    @property
    def k(self):
        return self.rows.shape[0]

    @property
    def d(self):
        return self.rows.shape[1]


def write_ppm(path, img: ImageGrid):
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(img.pixels.tobytes())


def read_ppm(path) -> ImageGrid:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P6"):
        raise IOError(f"{path}: not a binary PPM (P6) file")
    # header = magic, width, height, maxval; '#' comments run to end of line
    fields = []
    i = 2
    while len(fields) < 3:
        while i < len(blob) and blob[i : i + 1].isspace():
            i += 1
        if blob[i : i + 1] == b"#":
            while i < len(blob) and blob[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(blob) and not blob[j : j + 1].isspace():
            j += 1
        fields.append(int(blob[i:j]))
        i = j
    i += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise IOError(f"{path}: only maxval 255 is supported")
    data = np.frombuffer(blob, dtype=np.uint8, count=h * w * 3, offset=i)
    return ImageGrid(width=w, height=h, pixels=data.reshape(h, w, 3).copy())


def patchify(img: ImageGrid, patch: int) -> Tensor:
    """Non-overlapping row-major patches, pixel values scaled to [0, 1]."""
    if img.width % patch:
        raise ShapeError(f"patch size {patch} does not divide image size {img.width}")
    g = img.width // patch
    arr = img.pixels.astype(np.float32) / 255.0
    rows = arr.reshape(g, patch, g, patch, 3).transpose(0, 2, 1, 3, 4)
    return Tensor(rows.reshape(g * g, patch * patch * 3))


class VisionEncoder:
    """Frozen ViT; forward passes build no autograd graph."""

    def __init__(self, cfg: EncoderConfig, seed=0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        n_patches = (cfg.image_size // cfg.patch) ** 2
        rng = nn.seeded_rng(seed, 1)
        patch_dim = cfg.patch * cfg.patch * 3
        self.patch_w = nn.normal_param(rng, (patch_dim, cfg.width), False, dtype)
        self.patch_b = nn.const_param(0.0, (cfg.width,), False, dtype)
        self.cls = nn.normal_param(rng, (1, cfg.width), False, dtype)
        self.pos = nn.normal_param(rng, (n_patches + 1, cfg.width), False, dtype,
                                   std=1.0 / np.sqrt(cfg.width))
        self.blocks = [
            nn.TransformerBlock(cfg.width, cfg.heads, cfg.mlp_hidden, rng, dtype=dtype)
            for _ in range(cfg.layers)
        ]
        self.ln_f_g = nn.const_param(1.0, (cfg.width,), False, dtype)
        self.ln_f_b = nn.const_param(0.0, (cfg.width,), False, dtype)

    def named_tensors(self, prefix="vision"):
        yield f"{prefix}.patch_w", self.patch_w
        yield f"{prefix}.patch_b", self.patch_b
        yield f"{prefix}.cls", self.cls
        yield f"{prefix}.pos", self.pos
        for i, block in enumerate(self.blocks):
            yield from block.named_tensors(f"{prefix}.blocks.{i}")
        yield f"{prefix}.ln_f_g", self.ln_f_g
        yield f"{prefix}.ln_f_b", self.ln_f_b

    def encode_multigranular(self, img: ImageGrid) -> MGVFEmbedding:
        """Stack the [cls] state taken after every configured layer."""
        layers = tuple(self.cfg.extraction_layers)
        if layers[-1] > len(self.blocks):
            raise ConfigError(f"extraction layer {layers[-1]} beyond {len(self.blocks)} layers")
        if img.width != self.cfg.image_size:
            raise ShapeError(f"expected {self.cfg.image_size}px image, got {img.width}px")
        patches = patchify(img, self.cfg.patch)
        tokens = nn.linear(Tensor(patches.data.astype(self.dtype)), self.patch_w, self.patch_b)
        x = ag.add(ag.concat([self.cls, tokens], axis=0), self.pos)
        collected = []
        wanted = set(layers)
        for depth, block in enumerate(self.blocks, start=1):
            x = block(x)
            if depth in wanted:
                normed = ag.layer_norm(x, self.ln_f_g, self.ln_f_b)
                collected.append(normed.data[0])
            if depth >= layers[-1]:
                break
        return MGVFEmbedding(rows=np.stack(collected))
