"""Run configuration dataclasses and config-file loading.

A ``RunConfig`` pins everything a training or evaluation run depends on:
the label schema, encoder and extractor dimensions, the guidance weight,
optimizer settings, and token budgets. Configs serialize to plain dicts so
they can live in YAML/JSON files and in checkpoint manifests.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .schemas import ESCI4, RelevanceSchema

EXTRACTOR_KINDS = ("mlp", "poly", "gat")


@dataclass
class EncoderConfig:
    """Dimensions of the trainable cross-encoder backbone."""

    layers: int = 2
    width: int = 64
    heads: int = 4
    ffn_width: int = 256
    vocab_buckets: int = 8192
    max_positions: int = 128

    def __post_init__(self):
        if self.layers < 1 or self.width < 1 or self.heads < 1:
            raise ConfigurationError("encoder layers, width, and heads must be >= 1")
        if self.width % self.heads != 0:
            raise ConfigurationError("encoder width must be divisible by heads")
        if self.vocab_buckets < 1:
            raise ConfigurationError("vocab_buckets must be >= 1")


@dataclass
class ExtractorConfig:
    """Shape of the latent reasoning extractor.

    ``output_dim`` must equal the rationale-embedding dimension so the
    guidance loss is well defined. With ``project_output`` off, the
    extractor's natural width must already equal ``output_dim``; that mode
    exists for parameter audits against width-preserving maps.
    """

    kind: str = "gat"
    hidden_dim: int = 128
    mlp_layers: int = 2
    codes: int = 32
    gat_layers: int = 1
    leaky_slope: float = 0.2
    output_dim: int = 64
    project_output: bool = True

    def __post_init__(self):
        if self.kind not in EXTRACTOR_KINDS:
            raise ConfigurationError(f"extractor kind must be one of {EXTRACTOR_KINDS}")
        if self.codes < 1:
            raise ConfigurationError("codes must be >= 1")
        if self.mlp_layers < 1 or self.gat_layers < 1:
            raise ConfigurationError("layer counts must be >= 1")
        if not 0 < self.leaky_slope < 1:
            raise ConfigurationError("leaky_slope must lie in (0, 1)")
        if self.output_dim < 1 or self.hidden_dim < 1:
            raise ConfigurationError("dimensions must be >= 1")


@dataclass
class OptimizerConfig:
    """Decoupled-weight-decay adaptive-moment optimizer settings.

    The desk-scale default learning rate is much larger than a production
    fine-tuning rate because the backbone here is tiny and trained from
    scratch; the linear warmup keeps early updates from scattering runs
    across seeds.
    """

    lr: float = 2e-3
    weight_decay: float = 0.01
    batch_size: int = 64
    epochs: int = 5
    warmup_steps: int = 150

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("invalid optimizer settings")
        if self.warmup_steps < 0:
            raise ConfigurationError("warmup_steps must be >= 0")


@dataclass
class RunConfig:
    seed: int = 0
    schema: RelevanceSchema = field(default_factory=lambda: ESCI4)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    guidance_weight: float = 0.1
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    max_input_tokens: int = 128
    max_cot_tokens: int = 1024
    val_fraction: float = 0.1
    torch_threads: int | None = 1

    def __post_init__(self):
        if self.guidance_weight < 0:
            raise ConfigurationError("guidance_weight must be non-negative")
        if self.max_input_tokens < 4:
            raise ConfigurationError("max_input_tokens must be >= 4")
        if self.max_cot_tokens < 1:
            raise ConfigurationError("max_cot_tokens must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigurationError("val_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["schema"] = self.schema.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        schema = data.pop("schema", None)
        kwargs = {
            "schema": RelevanceSchema.from_dict(schema) if schema else ESCI4,
            "encoder": EncoderConfig(**data.pop("encoder", {})),
            "extractor": ExtractorConfig(**data.pop("extractor", {})),
            "optimizer": OptimizerConfig(**data.pop("optimizer", {})),
        }
        known = {f for f in cls.__dataclass_fields__ if f not in kwargs}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
        kwargs.update(data)
        return cls(**kwargs)


def load_run_config(path: str | Path) -> RunConfig:
    """Load a RunConfig from a YAML or JSON file."""
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        data = json.loads(text)
    else:
        data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} does not hold a mapping")
    return RunConfig.from_dict(data)


def save_run_config(path: str | Path, config: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if str(path).endswith(".json"):
            json.dump(config.to_dict(), fh, indent=2)
            fh.write("\n")
        else:
            yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
