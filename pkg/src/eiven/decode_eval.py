"""Nucleus sampling, generation, and exact-match micro-F1 reporting."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import lbc
from .config import DecodeConfig
from .errors import DecodeError, ShapeError
from .lm import EOS, detokenize
from .textnorm import normalize

NO_PREDICTION_LABEL = "∅"  # empty-set symbol in reports


def top_p_sample(logits, cfg: DecodeConfig, rng) -> int:
    """Temperature-scaled nucleus sampling.

    The nucleus is the smallest descending-probability prefix whose mass
    reaches top_p (never empty); it is renormalized before drawing.
    """
    values = logits.data if hasattr(logits, "data") else np.asarray(logits)
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise DecodeError("non-finite logits passed to the sampler")
    scaled = values / cfg.temperature
    scaled -= scaled.max()
    probs = np.exp(scaled)
    probs /= probs.sum()
    order = np.argsort(-probs, kind="stable")
    csum = np.cumsum(probs[order])
    cut = int(np.searchsorted(csum, cfg.top_p, side="left"))
    cut = min(cut, len(order) - 1)
    nucleus = probs[order[: cut + 1]]
    nucleus = nucleus / nucleus.sum()
    return int(order[int(rng.choice(cut + 1, p=nucleus))])


def generate(seq, model, cfg: DecodeConfig, rng=None) -> str:
    """Autoregressive sampling until EOS or max_new_tokens; returns text."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    if seq.length + cfg.max_new_tokens > model.cfg.lm.context:
        raise ShapeError(
            f"prompt length {seq.length} + max_new_tokens {cfg.max_new_tokens} "
            f"exceeds context window {model.cfg.lm.context}"
        )
    ids = list(seq.token_ids)
    produced = []
    for _ in range(cfg.max_new_tokens):
        view = type(seq)(
            token_ids=np.asarray(ids, dtype=np.int64),
            n_visual=seq.n_visual,
            visual_source=seq.visual_source,
        )
        logits = model.forward_one(view)
        token = top_p_sample(logits.data[-1], cfg, rng)
        if token == EOS:
            break
        ids.append(token)
        produced.append(token)
    return detokenize(produced)


def generate_batch(seqs, model, cfg: DecodeConfig, rng=None) -> list:
    """Batched generation over same-visual-count prompts.

    Rows are sampled in index order from one stream, so a fixed seed gives
    a fixed output list.
    """
    if not seqs:
        return []
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    ids = [list(s.token_ids) for s in seqs]
    produced = [[] for _ in seqs]
    active = [cfg.max_new_tokens > 0] * len(seqs)
    for s in seqs:
        if s.length + cfg.max_new_tokens > model.cfg.lm.context:
            raise ShapeError(
                f"prompt length {s.length} + max_new_tokens {cfg.max_new_tokens} "
                f"exceeds context window {model.cfg.lm.context}"
            )
    for _ in range(cfg.max_new_tokens):
        if not any(active):
            break
        views = [
            type(s)(token_ids=np.asarray(row, dtype=np.int64), n_visual=s.n_visual,
                    visual_source=s.visual_source)
            for s, row in zip(seqs, ids)
        ]
        logits = model.forward_batch(views).data
        for i, s in enumerate(seqs):
            if not active[i]:
                continue
            last = s.n_visual + len(ids[i]) - 1
            token = top_p_sample(logits[i, last], cfg, rng)
            if token == EOS:
                active[i] = False
            else:
                ids[i].append(token)
                produced[i].append(token)
    return [detokenize(p) for p in produced]


@dataclass
class EvalReport:
    """Exact-match counts plus per-attribute breakdown and confusions."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    per_attribute: dict = field(default_factory=dict)
    confusion: dict = field(default_factory=dict)  # attr -> gold -> pred -> count

    @staticmethod
    def _f1(tp, fp, fn):
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        if precision + recall == 0.0:
            return precision, recall, 0.0
        return precision, recall, 2 * precision * recall / (precision + recall)

    @property
    def micro_f1(self):
        return self._f1(self.tp, self.fp, self.fn)[2]

    def to_dict(self):
        precision, recall, f1 = self._f1(self.tp, self.fp, self.fn)
        return {
            "overall": {
                "tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": precision, "recall": recall, "micro_f1": f1,
            },
            "per_attribute": {
                attr: dict(zip(("tp", "fp", "fn"), counts))
                | dict(zip(("precision", "recall", "micro_f1"), self._f1(*counts)))
                for attr, counts in sorted(self.per_attribute.items())
            },
            "confusion": {
                attr: {gold: dict(sorted(preds.items())) for gold, preds in sorted(rows.items())}
                for attr, rows in sorted(self.confusion.items())
            },
        }

    def write_json(self, path, extra=None):
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)

    def write_confusion_csvs(self, out_dir):
        """One CSV per attribute: rows gold values, columns predictions."""
        paths = []
        for attr, rows in sorted(self.confusion.items()):
            golds = sorted(rows)
            preds = sorted({p for row in rows.values() for p in row})
            if NO_PREDICTION_LABEL not in preds:
                preds.append(NO_PREDICTION_LABEL)
            path = os.path.join(out_dir, f"confusion_{attr.lower()}.csv")
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["gold"] + preds)
                for gold in golds:
                    writer.writerow([gold] + [rows[gold].get(p, 0) for p in preds])
            paths.append(path)
        return paths


def micro_f1(predictions, golds, attributes=None) -> EvalReport:
    """Exact-match micro-F1 with the empty-prediction convention.

    A made-but-wrong prediction is both a false positive and a false
    negative for its gold; a missing prediction only a false negative.
    """
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions vs {len(golds)} golds")
    if attributes is None:
        attributes = ["all"] * len(golds)
    elif len(attributes) != len(golds):
        raise ValueError(f"{len(attributes)} attributes vs {len(golds)} golds")

    report = EvalReport()
    for pred, gold, attr in zip(predictions, golds, attributes):
        gold_norm = normalize(gold)
        counts = report.per_attribute.setdefault(attr, [0, 0, 0])
        row = report.confusion.setdefault(attr, {}).setdefault(gold_norm, {})
        if pred is lbc.NO_PREDICTION or pred is None or normalize(pred) == "":
            report.fn += 1
            counts[2] += 1
            row[NO_PREDICTION_LABEL] = row.get(NO_PREDICTION_LABEL, 0) + 1
            continue
        pred_norm = normalize(pred)
        row[pred_norm] = row.get(pred_norm, 0) + 1
        if pred_norm == gold_norm:
            report.tp += 1
            counts[0] += 1
        else:
            report.fp += 1
            report.fn += 1
            counts[1] += 1
            counts[2] += 1
    return report


def evaluate_model(model, instances, cfg: DecodeConfig, batch_size=96,
                   drop_image=None, drop_text=None) -> EvalReport:
    """Generate on single-product prompts and score exact matches."""
    preds = []
    rng = np.random.default_rng(cfg.seed)
    for start in range(0, len(instances), batch_size):
        chunk = instances[start : start + batch_size]
        seqs = [
            model.build_eval_sequence(inst, drop_image=drop_image, drop_text=drop_text)
            for inst in chunk
        ]
        for text in generate_batch(seqs, model, cfg, rng):
            preds.append(lbc.parse_answer(text))
    return micro_f1(
        preds,
        [inst.value for inst in instances],
        [inst.attribute for inst in instances],
    )
