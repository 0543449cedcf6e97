"""Value-string normalization shared by prompting, metrics, and data audits."""

import re

_WS = re.compile(r"\s+")
_TRAIL_PUNCT = re.compile(r"[.,;:!?]+$")


def normalize(text: str) -> str:
    """Lowercase, trim, collapse whitespace, strip trailing punctuation."""
    out = _WS.sub(" ", text.strip().lower())
    return _TRAIL_PUNCT.sub("", out).strip()
