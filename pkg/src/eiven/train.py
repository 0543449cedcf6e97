"""Frozen-backbone training: AdamW over adapters + projection, with
best-validation checkpointing and a binary tensor file format."""

from __future__ import annotations

import json
import os
import struct
import time

import numpy as np

from . import autograd as ag
from . import decode_eval
from . import lbc
from . import nn
from .config import RunConfig
from .errors import ConfigError, PairingUnavailableError, TrainingDivergedError
from .model import Eiven

CHECKPOINT_MAGIC = b"EIVN"
CHECKPOINT_VERSION = 1


class AdamW:
    """Adam with decoupled weight decay over named trainable tensors."""

    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.01):
        self.params = list(named_params)
        for name, p in self.params:
            if p.frozen or not p.requires_grad:
                raise ConfigError(f"optimizer given a frozen tensor: {name}")
        self.lr = lr
        self.beta1, self.beta2 = beta1, beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data).astype(p.dtype)


def batch_loss(batch, model: Eiven):
    """Teacher-forced answer loss averaged over the batch."""
    if not batch:
        raise ConfigError("empty batch")
    return model.sequence_loss(batch)


def train_step(batch, model: Eiven, optimizer: AdamW) -> float:
    loss = batch_loss(batch, model)
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingDivergedError(
            f"non-finite loss at step {optimizer.t + 1} (lr={optimizer.lr})"
        )
    optimizer.zero_grad()
    ag.backward(loss)
    optimizer.step()
    optimizer.zero_grad()
    return value


def build_training_items(model, train_pool, strategy, pair_fraction, rng):
    """Per-epoch sample list; pair partners are resampled every call."""
    order = rng.permutation(len(train_pool))
    items = []
    for idx in order:
        inst = train_pool[int(idx)]
        use_pair = strategy != lbc.NONE and rng.random() < pair_fraction
        if use_pair:
            try:
                pair = lbc.sample_pair(inst, train_pool, rng)
                items.append(model.build_sequence(pair, strategy))
                continue
            except PairingUnavailableError:
                pass
        items.append(model.build_sequence(inst, lbc.NONE))
    return items


def fit(instances, cfg: RunConfig, out_dir=None, log=None):
    """Train on the train split, validate each epoch, keep the best weights.

    Returns (model, history). With out_dir set, writes checkpoint.eivn and
    run_manifest.json there.
    """
    cfg.validate()
    train_pool = [i for i in instances if i.split == "train"]
    val_pool = [i for i in instances if i.split == "val"]
    if not train_pool or not val_pool:
        raise ConfigError("dataset needs non-empty train and val splits")

    model = Eiven(cfg)
    optimizer = AdamW(
        list(model.trainable_named()),
        lr=cfg.train.lr, beta1=cfg.train.beta1, beta2=cfg.train.beta2,
        eps=cfg.train.eps, weight_decay=cfg.train.weight_decay,
    )
    batch_size = cfg.train.batch_size
    history = []
    best = {"f1": -1.0, "epoch": -1, "weights": None}
    started = time.time()

    for epoch in range(cfg.train.epochs):
        epoch_started = time.time()
        rng = nn.seeded_rng(cfg.train.seed, 10, epoch)
        items = build_training_items(
            model, train_pool, cfg.train.lbc_strategy, cfg.train.lbc_pair_fraction, rng
        )
        losses = []
        for start in range(0, len(items), batch_size):
            losses.append(train_step(items[start : start + batch_size], model, optimizer))
        report = decode_eval.evaluate_model(model, val_pool, cfg.decode)
        f1 = report.micro_f1
        if f1 > best["f1"]:
            best = {
                "f1": f1,
                "epoch": epoch,
                "weights": {name: p.data.copy() for name, p in model.trainable_named()},
            }
        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_micro_f1": f1,
            "seconds": round(time.time() - epoch_started, 3),
        }
        history.append(row)
        if log:
            log(f"epoch {epoch}: loss {row['train_loss']:.4f} val_f1 {f1:.4f}")

    for name, p in model.trainable_named():
        p.data = best["weights"][name].copy()

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = os.path.join(out_dir, "checkpoint.eivn")
        save_checkpoint(ckpt_path, cfg, dict(model.trainable_named()))
        manifest = {
            "config": cfg.to_dict(),
            "seed": cfg.train.seed,
            "history": history,
            "best_epoch": best["epoch"],
            "best_val_micro_f1": best["f1"],
            "wall_seconds": round(time.time() - started, 3),
        }
        with open(os.path.join(out_dir, "run_manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    return model, history


# --- checkpoint format ---
# magic "EIVN", version u32, tensor count u32, then for each tensor:
#   name length u32, name bytes, rank u32, dims u32 each, f32 data
# and finally the config JSON, length-prefixed. All little-endian.


def save_checkpoint(path, cfg: RunConfig, tensors):
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, tensor in tensors.items():
            data = tensor.data if hasattr(tensor, "data") else tensor
            arr = np.ascontiguousarray(data, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
        doc = cfg.to_json().encode("utf-8")
        fh.write(struct.pack("<I", len(doc)))
        fh.write(doc)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise IOError(f"{path}: not an EIVN checkpoint")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise IOError(f"{path}: unsupported checkpoint version {version}")
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            n = int(np.prod(dims)) if rank else 1
            tensors[name] = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(dims).copy()
        (doc_len,) = struct.unpack("<I", fh.read(4))
        cfg = RunConfig.from_json(fh.read(doc_len).decode("utf-8"))
    return cfg, tensors


def model_from_checkpoint(path, data_dir=None) -> Eiven:
    """Rebuild frozen backbones from the recorded seeds, then load weights."""
    cfg, tensors = load_checkpoint(path)
    if data_dir is not None:
        cfg.data_dir = data_dir
    model = Eiven(cfg)
    if cfg.merged:
        model.lm.adapters = None
        named = dict(model.lm.base_named_tensors())
        named.update(model.projection.named_tensors())
    else:
        named = dict(model.trainable_named())
    missing = set(named) - set(tensors)
    if missing:
        raise IOError(f"{path}: checkpoint lacks tensors {sorted(missing)}")
    for name, arr in tensors.items():
        if name not in named:
            raise IOError(f"{path}: unexpected tensor {name!r}")
        if named[name].shape != arr.shape:
            raise IOError(
                f"{path}: shape mismatch for {name}: {named[name].shape} vs {arr.shape}"
            )
        named[name].data = arr.astype(named[name].dtype)
    return model


def merged_checkpoint_tensors(model: Eiven):
    """All tensors a merged (adapter-free) model needs at load time."""
    named = dict(model.lm.base_named_tensors())
    named.update(model.projection.named_tensors())
    return named
