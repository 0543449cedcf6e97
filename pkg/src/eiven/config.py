"""Configuration dataclasses and the JSON run-config document."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError

ADAPTER_KINDS = ("rep_linear_sparse", "mlp_nonlinear", "mlp_linear_dense")
LBC_STRATEGIES = ("judge_last", "judge_first", "better_instance", "none")


@dataclass
class EncoderConfig:
    """Toy vision transformer: 8 layers of width 64 on 32x32 RGB."""

    image_size: int = 32
    patch: int = 8
    width: int = 64
    layers: int = 8
    heads: int = 4
    mlp_hidden: int = 128
    extraction_layers: tuple = (2, 4, 6, 8)

    def validate(self):
        if self.image_size % self.patch:
            raise ConfigError("encoder.patch must divide encoder.image_size")
        layers = tuple(self.extraction_layers)
        if not layers or list(layers) != sorted(set(layers)):
            raise ConfigError("encoder.extraction_layers must be strictly increasing")
        if layers[0] < 1 or layers[-1] > self.layers:
            raise ConfigError(
                f"encoder.extraction_layers out of range 1..{self.layers}: {layers}"
            )


@dataclass
class LMConfig:
    blocks: int = 4
    width: int = 128
    heads: int = 4
    context: int = 512
    mlp_hidden: int = 256
    vocab: int = 259


@dataclass
class AdapterSpec:
    """Adapter variant: kind fixes linearity and sparsity, r the bottleneck."""

    kind: str = "rep_linear_sparse"
    r: int = 8
    groups: int = 4

    def validate(self, width=None):
        if self.kind not in ADAPTER_KINDS:
            raise ConfigError(f"adapter.kind must be one of {ADAPTER_KINDS}, got {self.kind!r}")
        if self.r < 1:
            raise ConfigError("adapter.r must be >= 1")
        if self.is_sparse:
            if self.groups < 1 or self.r % self.groups:
                raise ConfigError("adapter.groups must divide adapter.r")
            if width is not None and width % self.groups:
                raise ConfigError("adapter.groups must divide the model width")

    @property
    def is_sparse(self):
        return self.kind == "rep_linear_sparse"

    @property
    def is_linear(self):
        return self.kind in ("rep_linear_sparse", "mlp_linear_dense")


@dataclass
class ProjectionConfig:
    hidden: int = 128  # bottleneck width of the visual projection


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 16
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    lbc_strategy: str = "judge_last"
    # fraction of training samples built as comparison pairs when a pair
    # strategy is active; the rest stay single so evaluation-style prompts
    # remain in-distribution for the from-scratch decoder
    lbc_pair_fraction: float = 0.5
    freeze_lm_base: bool = True
    freeze_vision: bool = True

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.lbc_strategy not in LBC_STRATEGIES:
            raise ConfigError(
                f"train.lbc_strategy must be one of {LBC_STRATEGIES}, got {self.lbc_strategy!r}"
            )
        if not 0.0 <= self.lbc_pair_fraction <= 1.0:
            raise ConfigError("train.lbc_pair_fraction must be in [0, 1]")
        if not (self.freeze_lm_base and self.freeze_vision):
            raise ConfigError("backbones are always frozen; only adapters and projection train")


@dataclass
class DecodeConfig:
    temperature: float = 0.1
    top_p: float = 0.75
    max_new_tokens: int = 32
    seed: int = 0

    def validate(self):
        if self.temperature <= 0:
            raise ConfigError("decode.temperature must be > 0")
        if not 0 < self.top_p <= 1:
            raise ConfigError("decode.top_p must be in (0, 1]")
        if self.max_new_tokens < 0:
            raise ConfigError("decode.max_new_tokens must be >= 0")


@dataclass
class RunConfig:
    """Everything one experiment needs, serializable as a single JSON doc."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lm: LMConfig = field(default_factory=LMConfig)
    adapter: AdapterSpec = field(default_factory=AdapterSpec)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    data_dir: str = "data"
    model_seed: int = 0  # backbone init; independent of train.seed
    use_mgvf: bool = True
    drop_image: bool = False
    drop_text: bool = False
    merged: bool = False  # checkpoint holds a merged, adapter-free model

    def validate(self):
        self.encoder.validate()
        self.adapter.validate(self.lm.width)
        self.train.validate()
        self.decode.validate()
        if self.drop_image and self.drop_text:
            raise ConfigError("drop_image and drop_text cannot both be true for training")
        if not self.use_mgvf:
            self.encoder.extraction_layers = (self.encoder.layers,)
        self.encoder.extraction_layers = tuple(self.encoder.extraction_layers)
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        cfg = cls()
        for name, sub in (
            ("encoder", EncoderConfig),
            ("lm", LMConfig),
            ("adapter", AdapterSpec),
            ("projection", ProjectionConfig),
            ("train", TrainConfig),
            ("decode", DecodeConfig),
        ):
            if name in doc:
                known = {f.name for f in dataclasses.fields(sub)}
                unknown = set(doc[name]) - known
                if unknown:
                    raise ConfigError(f"unknown {name} config field(s): {sorted(unknown)}")
                setattr(cfg, name, sub(**doc[name]))
        for name in ("data_dir", "model_seed", "use_mgvf", "drop_image", "drop_text", "merged"):
            if name in doc:
                setattr(cfg, name, doc[name])
        extras = set(doc) - {f.name for f in dataclasses.fields(cls)}
        if extras:
            raise ConfigError(f"unknown config field(s): {sorted(extras)}")
        return cfg.validate()

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))
