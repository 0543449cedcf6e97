"""Procedural implicit-AVE dataset: rendered products plus careful text.

Every instance's gold value is deliberately absent from its text. The
value is recoverable from the rendered image, from an indirect cue phrase
in the text, or both, depending on the instance's evidence tag:

  image    -> the object renders the value; the text has a filler phrase
  text_cue -> the image shows only background; the text carries a cue
  both     -> rendered object and cue phrase

Word pools below are screened (see tests) so that no value or listed
synonym appears as a substring of any text they can produce.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import SchemaError
from .textnorm import normalize
from .vision import ImageGrid, write_ppm

EVIDENCE_KINDS = ("image", "text_cue", "both")
# evidence mix: half image-only, then cue-only, then both
EVIDENCE_MIX = (0.5, 0.3, 0.2)
DEFAULT_SPLIT_RATIOS = (0.70, 0.15, 0.15)
SPLITS = ("train", "val", "test")
IMAGE_SIZE = 32


@dataclass
class ProductInstance:
    id: str
    image_path: str
    text_context: str
    attribute: str
    value: str
    split: str
    evidence: str


@dataclass
class AttributeSchema:
    """One attribute: its closed value set, renderer, and text lexicons."""

    name: str
    kind: str  # which visual dimension the value controls: pattern|shape|tint
    values: list
    synonyms: dict = field(default_factory=dict)  # value -> banned stand-ins
    cues: dict = field(default_factory=dict)  # value -> implying phrases

    def validate(self):
        normed = [normalize(v) for v in self.values]
        if len(set(normed)) != len(normed):
            raise SchemaError(f"{self.name}: values collide after normalization")
        if len(self.values) < 2:
            raise SchemaError(f"{self.name}: needs at least two values for comparisons")
        for v in self.values:
            if not self.cues.get(v):
                raise SchemaError(f"{self.name}: value {v!r} has no text cue")


PATTERNS = ("solid", "striped", "dotted", "checkered")
SHAPES = ("circle", "square", "triangle", "diamond")
TINTS = ("crimson", "teal", "amber", "violet")

TINT_RANGES = {
    "crimson": ((160, 220), (20, 60), (30, 70)),
    "teal": ((10, 60), (120, 170), (130, 180)),
    "amber": ((200, 250), (140, 190), (10, 50)),
    "violet": ((120, 170), (40, 80), (160, 220)),
}


def default_schemas():
    return [
        AttributeSchema(
            name="Pattern",
            kind="pattern",
            values=list(PATTERNS),
            synonyms={
                "solid": ["plain"],
                "striped": ["stripe", "stripes", "stripy"],
                "dotted": ["dot", "dots", "spots", "spotted", "polka"],
                "checkered": ["checked", "checker", "plaid", "gingham"],
            },
            cues={
                "solid": ["one unbroken color finish", "single hue finish"],
                "striped": ["awning style lanes", "racing lane look"],
                "dotted": ["confetti speckle look", "pinpoint accents"],
                "checkered": ["chess board look", "picnic cloth look"],
            },
        ),
        AttributeSchema(
            name="Shape",
            kind="shape",
            values=list(SHAPES),
            synonyms={
                "circle": ["round", "circular", "disc"],
                "square": ["boxy", "squared"],
                "triangle": ["triangular", "wedge"],
                "diamond": ["rhombus", "diamonds"],
            },
            cues={
                "circle": ["rolls smoothly on its rim", "wheel style outline"],
                "square": ["four equal corners", "box style outline"],
                "triangle": ["three pointed outline", "pyramid style face"],
                "diamond": ["tilted gem cut outline", "kite style face"],
            },
        ),
        AttributeSchema(
            name="Tint",
            kind="tint",
            values=list(TINTS),
            synonyms={
                "crimson": ["scarlet", "ruby", "red"],
                "teal": ["turquoise", "cyan"],
                "amber": ["golden", "orange"],
                "violet": ["purple", "lavender"],
            },
            cues={
                "crimson": ["berry wine finish", "rose glow finish"],
                "teal": ["lagoon water finish", "peacock sheen finish"],
                "amber": ["honey sunset finish", "harvest glow finish"],
                "violet": ["plum dusk finish", "orchid bloom finish"],
            },
        ),
    ]


# shared word pools, screened against every value and synonym above
ADJECTIVES = ("classic", "modern", "compact", "handy", "sturdy", "cozy",
              "daily", "studio", "deluxe", "basic")
NOUNS = ("tote bag", "cushion", "desk mat", "scarf", "phone case",
         "mug wrap", "apron", "sleeve", "pennant", "mat")
FILLERS = ("easy to wipe clean", "ships in a gift pouch", "made for travel days",
           "fits most tables", "light to carry", "great for the office",
           "loved by commuters", "a staple for studios")


def _uniform_int(rng, lo, hi):
    return int(rng.integers(lo, hi + 1))


def _tint_color(rng, tint):
    r, g, b = TINT_RANGES[tint]
    return np.array([_uniform_int(rng, *r), _uniform_int(rng, *g), _uniform_int(rng, *b)],
                    dtype=np.int32)


def _shape_mask(shape, cx, cy, radius):
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    if shape == "circle":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2
    if shape == "square":
        return (np.abs(xx - cx) <= radius) & (np.abs(yy - cy) <= radius)
    if shape == "triangle":
        # upward-pointing: width grows linearly from apex to base
        rel = (yy - (cy - radius)) / (2.0 * radius)
        return (rel >= 0) & (rel <= 1) & (np.abs(xx - cx) <= rel * radius)
    if shape == "diamond":
        return np.abs(xx - cx) + np.abs(yy - cy) <= radius
    raise SchemaError(f"unknown shape {shape!r}")


def _pattern_pixels(pattern, mask, fg, fg2, phase):
    """Color the masked region; second color carries the pattern."""
    yy, xx = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]
    img = np.zeros((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.int32)
    img[mask] = fg
    if pattern == "solid":
        return img
    if pattern == "striped":
        second = mask & (((yy + phase) // 3) % 2 == 0)
    elif pattern == "dotted":
        second = mask & ((yy + phase) % 4 < 2) & ((xx + phase) % 4 < 2)
    elif pattern == "checkered":
        second = mask & ((((yy + phase) // 4) + ((xx + phase) // 4)) % 2 == 0)
    else:
        raise SchemaError(f"unknown pattern {pattern!r}")
    img[second] = fg2
    return img


def _render(rng, schema, value, with_object=True) -> ImageGrid:
    # nuisance draws happen in a fixed order before the labeled dimension
    # is overridden, so two values under the same seed share all nuisance
    bg = np.array([_uniform_int(rng, 185, 240) for _ in range(3)], dtype=np.int32)
    noise = rng.integers(-6, 7, size=(IMAGE_SIZE, IMAGE_SIZE, 3))
    tint = TINTS[_uniform_int(rng, 0, len(TINTS) - 1)]
    shape = SHAPES[_uniform_int(rng, 0, len(SHAPES) - 1)]
    pattern = PATTERNS[_uniform_int(rng, 0, len(PATTERNS) - 1)]
    cx = 15 + _uniform_int(rng, -3, 3)
    cy = 15 + _uniform_int(rng, -3, 3)
    radius = _uniform_int(rng, 9, 12)
    phase = _uniform_int(rng, 0, 3)

    if schema.kind == "pattern":
        pattern = value
    elif schema.kind == "shape":
        shape = value
    elif schema.kind == "tint":
        tint = value
    else:
        raise SchemaError(f"unknown renderer kind {schema.kind!r}")

    fg = _tint_color(rng, tint)  # 3 draws regardless of family
    fg2 = (fg * 0.45).astype(np.int32)
    canvas = np.tile(bg, (IMAGE_SIZE, IMAGE_SIZE, 1))
    mask = _shape_mask(shape, cx, cy, radius) if with_object else np.zeros(
        (IMAGE_SIZE, IMAGE_SIZE), dtype=bool
    )
    if with_object:
        canvas = np.where(mask[..., None], _pattern_pixels(pattern, mask, fg, fg2, phase), canvas)
    # background noise only: the object stays crisp so "solid" really is
    # a single color and pattern structure survives at 32x32
    canvas = np.where(mask[..., None], canvas, canvas + noise)
    pixels = np.clip(canvas, 0, 255).astype(np.uint8)
    return ImageGrid(width=IMAGE_SIZE, height=IMAGE_SIZE, pixels=pixels)


def render_image(schema: AttributeSchema, value: str, rng) -> ImageGrid:
    """Deterministic-under-seed rendering of one labeled product image."""
    if value not in schema.values:
        raise SchemaError(f"{schema.name}: unknown value {value!r}")
    return _render(rng, schema, value, with_object=True)


def render_background(schema: AttributeSchema, value: str, rng) -> ImageGrid:
    """Background-only image for cue-only instances; consumes the same draws."""
    if value not in schema.values:
        raise SchemaError(f"{schema.name}: unknown value {value!r}")
    return _render(rng, schema, value, with_object=False)


def _make_text(rng, schema, value, evidence):
    adj = ADJECTIVES[_uniform_int(rng, 0, len(ADJECTIVES) - 1)]
    noun = NOUNS[_uniform_int(rng, 0, len(NOUNS) - 1)]
    filler = FILLERS[_uniform_int(rng, 0, len(FILLERS) - 1)]
    cue_list = schema.cues[value]
    cue = cue_list[_uniform_int(rng, 0, len(cue_list) - 1)]
    phrase = cue if evidence in ("text_cue", "both") else filler
    return f"{adj} {noun} - {phrase}"


def _allocate(n, ratios):
    """Largest-remainder allocation of n items over ratios (within +-1)."""
    raw = [n * r for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    order = sorted(range(len(ratios)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _slug(text):
    return normalize(text).replace(" ", "-")


def gen_dataset(schemas, samples_per_value, cap, split_ratios, seed, out_dir):
    """Generate images plus a JSONL manifest and stats.json under out_dir."""
    ratios = tuple(split_ratios)
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SchemaError(f"split ratios must be positive and sum to 1, got {ratios}")
    if samples_per_value > cap:
        raise SchemaError(f"samples_per_value {samples_per_value} exceeds cap {cap}")
    for schema in schemas:
        schema.validate()

    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    instances = []
    for a_idx, schema in enumerate(schemas):
        for v_idx, value in enumerate(schema.values):
            n = min(samples_per_value, cap)
            alloc_rng = np.random.default_rng(
                np.random.SeedSequence(seed, spawn_key=(a_idx, v_idx))
            )
            n_image, n_cue, n_both = _allocate(n, EVIDENCE_MIX)
            evidence = (["image"] * n_image + ["text_cue"] * n_cue + ["both"] * n_both)
            alloc_rng.shuffle(evidence)
            split_counts = _allocate(n, ratios)
            splits = [s for s, c in zip(SPLITS, split_counts) for _ in range(c)]
            alloc_rng.shuffle(splits)
            for i in range(n):
                rng = np.random.default_rng(
                    np.random.SeedSequence(seed, spawn_key=(a_idx, v_idx, i))
                )
                inst_id = f"{_slug(schema.name)}-{_slug(value)}-{i:04d}"
                renderer = render_background if evidence[i] == "text_cue" else render_image
                img = renderer(schema, value, rng)
                rel_path = os.path.join("images", f"{inst_id}.ppm")
                write_ppm(os.path.join(out_dir, rel_path), img)
                instances.append(
                    ProductInstance(
                        id=inst_id,
                        image_path=rel_path,
                        text_context=_make_text(rng, schema, value, evidence[i]),
                        attribute=schema.name,
                        value=value,
                        split=splits[i],
                        evidence=evidence[i],
                    )
                )

    write_manifest(os.path.join(out_dir, "manifest.jsonl"), instances)
    with open(os.path.join(out_dir, "stats.json"), "w") as fh:
        json.dump(dataset_stats(instances), fh, indent=2, sort_keys=True)
    return instances


def write_manifest(path, instances):
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(json.dumps(asdict(inst)) + "\n")


def read_manifest(path):
    instances = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                instances.append(ProductInstance(**json.loads(line)))
    return instances


def dataset_stats(instances):
    """Per-attribute per-value counts plus head/tail (max/min) counts."""
    stats = {}
    for inst in instances:
        per_value = stats.setdefault(inst.attribute, {})
        per_value[inst.value] = per_value.get(inst.value, 0) + 1
    return {
        attr: {
            "values": dict(sorted(per_value.items())),
            "head": max(per_value.values()),
            "tail": min(per_value.values()),
        }
        for attr, per_value in stats.items()
    }


def verify_implicitness(manifest, schemas=None):
    """Ids of instances whose value (or a listed synonym) leaks into the text."""
    instances = read_manifest(manifest) if isinstance(manifest, (str, os.PathLike)) else manifest
    synonyms = {}
    for schema in schemas or default_schemas():
        for value, alts in schema.synonyms.items():
            synonyms.setdefault((schema.name, normalize(value)), [normalize(a) for a in alts])
    violations = []
    for inst in instances:
        text = normalize(inst.text_context)
        value = normalize(inst.value)
        banned = [value] + synonyms.get((inst.attribute, value), [])
        if any(term and term in text for term in banned):
            violations.append(inst.id)
    return violations
