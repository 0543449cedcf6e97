"""Full pipeline assembly: images and text in, next-token logits out."""

from __future__ import annotations

import os

import numpy as np

from . import autograd as ag
from . import lbc
from . import lm as lm_mod
from . import nn
from .autograd import Tensor
from .config import RunConfig
from .lbc import ComparisonPair
from .lm import BOS, EOS, PromptSequence, tokenize
from .projection import ProjectionNet
from .vision import ImageGrid, VisionEncoder, read_ppm


def prompt_text(question, contexts):
    """Question and context segments, newline-separated; the trailing
    newline is the fixed answer delimiter."""
    return "\n".join([question, *contexts]) + "\n"


class Eiven:
    """Frozen vision encoder and LM around trainable adapters + projection."""

    def __init__(self, cfg: RunConfig, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        self.vision = VisionEncoder(cfg.encoder, seed=cfg.model_seed, dtype=dtype)
        self.projection = ProjectionNet(
            cfg.encoder.width, cfg.projection.hidden, cfg.lm.width,
            seed=cfg.train.seed, dtype=dtype,
        )
        self.lm = lm_mod.DecoderLM(
            cfg.lm, adapter_spec=cfg.adapter, seed=cfg.model_seed,
            adapter_seed=cfg.train.seed, dtype=dtype,
        )
        self.k_visual = len(cfg.encoder.extraction_layers)
        self.data_dir = cfg.data_dir
        self._mgvf_cache = {}

    # --- parameter bookkeeping ---

    def trainable_named(self):
        yield from self.projection.named_tensors()
        yield from self.lm.adapter_named_tensors()

    def frozen_named(self):
        yield from self.vision.named_tensors()
        yield from self.lm.base_named_tensors()

    def frozen_digest(self):
        return nn.weights_digest(self.frozen_named())

    # --- image encoding (frozen; cache by path) ---

    def encode_instance(self, instance) -> np.ndarray:
        key = instance.image_path
        rows = self._mgvf_cache.get(key)
        if rows is None:
            img = read_ppm(os.path.join(self.data_dir, instance.image_path))
            rows = self.vision.encode_multigranular(img).rows
            self._mgvf_cache[key] = rows
        return rows

    def encode_image(self, img: ImageGrid) -> np.ndarray:
        return self.vision.encode_multigranular(img).rows

    # --- sequence building ---

    def build_sequence(self, item, strategy=lbc.NONE, with_answer=True,
                       drop_image=None, drop_text=None) -> PromptSequence:
        drop_image = self.cfg.drop_image if drop_image is None else drop_image
        drop_text = self.cfg.drop_text if drop_text is None else drop_text
        is_pair = isinstance(item, ComparisonPair)
        question, answer = lbc.build_prompt(item, strategy if is_pair else lbc.NONE)
        instances = [item.first, item.second] if is_pair else [item]
        contexts = ["" if drop_text else inst.text_context for inst in instances]

        n_visual = self.k_visual * len(instances)
        visual_source = None
        if not drop_image:
            visual_source = np.concatenate(
                [self.encode_instance(inst) for inst in instances], axis=0
            )

        ids = [BOS] + tokenize(prompt_text(question, contexts))
        seq = PromptSequence(
            token_ids=np.asarray(ids, dtype=np.int64),
            n_visual=n_visual,
            visual_source=visual_source,
        )
        if with_answer:
            answer_ids = tokenize(answer)
            seq.answer_start = n_visual + len(ids)
            seq.answer_end = seq.answer_start + len(answer_ids)
            seq.token_ids = np.asarray(ids + answer_ids + [EOS], dtype=np.int64)
        return seq

    def build_eval_sequence(self, instance, drop_image=None, drop_text=None):
        return self.build_sequence(
            instance, lbc.NONE, with_answer=False,
            drop_image=drop_image, drop_text=drop_text,
        )

    # --- forward passes ---

    def _visual_tensor(self, seqs, batched=True):
        n_visual = seqs[0].n_visual
        if n_visual == 0:
            return None
        if seqs[0].visual_source is None:
            shape = (len(seqs), n_visual, self.cfg.lm.width)
            return Tensor(np.zeros(shape if batched else shape[1:], dtype=self.dtype))
        rows = np.stack([s.visual_source for s in seqs]).astype(self.dtype)
        if not batched:
            rows = rows[0]
        return self.projection.project(Tensor(rows))

    def forward_batch(self, seqs):
        """Logits for same-visual-count sequences, right-padded with PAD."""
        n_visual = seqs[0].n_visual
        assert all(s.n_visual == n_visual for s in seqs)
        t_text = max(len(s.token_ids) for s in seqs)
        ids = np.full((len(seqs), t_text), lm_mod.PAD, dtype=np.int64)
        for i, s in enumerate(seqs):
            ids[i, : len(s.token_ids)] = s.token_ids
        visual = self._visual_tensor(seqs)
        return self.lm.forward(visual, ids)

    def forward_one(self, seq):
        visual = self._visual_tensor([seq], batched=False)
        return self.lm.forward(visual, seq.token_ids)

    def batch_targets(self, seqs):
        """(targets, mask) arrays aligned with forward_batch logits."""
        t_full = max(s.length for s in seqs)
        targets = np.full((len(seqs), t_full), lm_mod.PAD, dtype=np.int64)
        mask = np.zeros((len(seqs), t_full), dtype=bool)
        for i, s in enumerate(seqs):
            full = s.full_ids()
            targets[i, : s.length - 1] = full[1:]
            mask[i, : s.length] = s.loss_mask()
        return targets, mask

    def sequence_loss(self, seqs):
        """Mean per-sequence answer loss; handles mixed visual counts."""
        groups = {}
        for s in seqs:
            groups.setdefault(s.n_visual, []).append(s)
        total = None
        for group in groups.values():
            logits = self.forward_batch(group)
            targets, mask = self.batch_targets(group)
            part = ag.cross_entropy_masked(logits, targets, mask)
            weighted = ag.mul(part, len(group) / len(seqs))
            total = weighted if total is None else ag.add(total, weighted)
        return total
