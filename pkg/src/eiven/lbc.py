"""Learning-by-Comparison: pair sampling, prompt templates, answer parsing.

Two same-attribute products are shown together during training and the
model must state and compare their values. Validation and test prompts
always use the single-product template, whatever strategy trained the
model, so parse_answer also rescues comparison-formatted generations.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import PairingUnavailableError
from .textnorm import normalize

JUDGE_LAST = "judge_last"
JUDGE_FIRST = "judge_first"
BETTER_INSTANCE = "better_instance"
NONE = "none"
STRATEGIES = (JUDGE_LAST, JUDGE_FIRST, BETTER_INSTANCE, NONE)

# Frozen prompt wordings. Tests and checkpoints depend on these exact
# strings; change them and trained models stop matching their prompts.
QUESTION_SINGLE = "What is the {attribute} of this product?"
QUESTION_JUDGE_LAST = (
    "What is the {attribute} of the first product and of the second product, "
    "and do they have the same {attribute}?"
)
QUESTION_JUDGE_FIRST = (
    "Do the first product and the second product have the same {attribute}, "
    "and what is the {attribute} of each?"
)
QUESTION_BETTER = (
    "Which product shows its {attribute} more clearly, and what is that {attribute}?"
)
SAME = "Same"
DIFFERENT = "Different"

_FIRST_FIELD = re.compile(r"first\s*:\s*([^;]*)", re.IGNORECASE)
_SECOND_FIELD = re.compile(r"^\s*second\s*:\s*([^;]*)", re.IGNORECASE)


@dataclass
class ComparisonPair:
    first: object  # ProductInstance
    second: object
    attribute: str

    @property
    def same(self):
        return normalize(self.first.value) == normalize(self.second.value)


def sample_pair(anchor, train_pool, rng) -> ComparisonPair:
    """Uniformly pick a same-attribute partner from the training pool.

    The anchor itself is excluded; a single-instance attribute raises so
    the caller can fall back to a single-product prompt.
    """
    candidates = [
        inst
        for inst in train_pool
        if inst.attribute == anchor.attribute and inst.id != anchor.id
    ]
    if not candidates:
        raise PairingUnavailableError(
            f"attribute {anchor.attribute!r} has no second training instance"
        )
    partner = candidates[int(rng.integers(0, len(candidates)))]
    return ComparisonPair(first=anchor, second=partner, attribute=anchor.attribute)


def build_prompt(item, strategy: str) -> tuple[str, str]:
    """(question, answer) text for one product or one comparison pair."""
    if strategy == NONE:
        return QUESTION_SINGLE.format(attribute=item.attribute), item.value
    pair: ComparisonPair = item
    v1, v2 = pair.first.value, pair.second.value
    verdict = SAME if pair.same else DIFFERENT
    if strategy == JUDGE_LAST:
        question = QUESTION_JUDGE_LAST.format(attribute=pair.attribute)
        return question, f"First: {v1}; Second: {v2}; {verdict}"
    if strategy == JUDGE_FIRST:
        question = QUESTION_JUDGE_FIRST.format(attribute=pair.attribute)
        return question, f"{verdict}; First: {v1}; Second: {v2}"
    if strategy == BETTER_INSTANCE:
        question = QUESTION_BETTER.format(attribute=pair.attribute)
        # the instance whose image actually renders the attribute wins;
        # ties go to the first product
        first_rendered = getattr(pair.first, "evidence", "image") != "text_cue"
        second_rendered = getattr(pair.second, "evidence", "image") != "text_cue"
        if second_rendered and not first_rendered:
            return question, f"Second: {v2}"
        return question, f"First: {v1}"
    raise ValueError(f"unknown strategy {strategy!r}")


NO_PREDICTION = None


def parse_answer(generated: str):
    """Extract the predicted value from a generation.

    Comparison-formatted output is reduced to its first-product field.
    Empty output maps to the no-prediction marker (scored as a miss, not
    a wrong answer).
    """
    text = generated
    m = _FIRST_FIELD.search(text)
    if m:
        text = m.group(1)
    else:
        m = _SECOND_FIELD.match(text)
        if m:
            text = m.group(1)
    value = normalize(text)
    return value if value else NO_PREDICTION
