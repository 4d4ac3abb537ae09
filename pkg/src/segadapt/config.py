"""Versioned JSON run configuration covering every subcommand.

One document carries the model, adapter, LoRA, loss, data, training, and
test-time-adaptation sections; each consumer reads only the sections it
needs.  Parsing is strict: an unknown key or a bad version is an error, and
absent keys fall back to the section defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .adapter import METHODS, AdapterConfig, LoraConfig
from .data import DomainConfig, SplitSizes, default_source_domain, default_target_domain
from .errors import ValidationError
from .losses import LossConfig
from .model import ModelConfig

CONFIG_VERSION = 1

# Desk-scale adapter dims; AdapterConfig's own defaults carry the published
# dims, which would dwarf the toy decoder.
TOY_ADAPTER = AdapterConfig(num_prompts=2, prompt_dim=128, key_dim=64, value_dim=64)


@dataclass(frozen=True)
class TrainSettings:
    method: str = "sam_da_dec"
    lr: float = 1e-3
    epochs: int = 3
    batch_size: int = 4
    seed: int = 0
    weight_decay: float = 0.0
    init_from: str | None = None
    # Cap on training samples, taken in stored (volume-contiguous) order.
    # Models the scarce-annotation regime where parameter-efficient methods
    # hold their largest edge; None trains on the whole split.
    max_train_samples: int | None = None

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValidationError(f"method {self.method!r} not one of {METHODS}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("lr must be positive; epochs and batch_size at least 1")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.max_train_samples is not None and self.max_train_samples < 1:
            raise ValidationError(
                f"max_train_samples must be at least 1, got {self.max_train_samples}"
            )


@dataclass(frozen=True)
class TTDASettings:
    iterations: int = 5
    # Calibrated on the target validation split; larger steps let the
    # proximity term push confident-pixel entropy back up mid-adaptation.
    lr: float = 1e-3
    lambda_entropy: float = 1.0
    lambda_proximity: float = 1.0
    lambda_contrastive: float = 0.1
    positive_offset: int = 1
    negative_min_offset: int = 5
    seed: int = 0
    split: str = "target_test"

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValidationError(f"iterations must be >= 1, got {self.iterations}")
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if min(self.lambda_entropy, self.lambda_proximity, self.lambda_contrastive) < 0:
            raise ValidationError("TTDA loss weights must be non-negative")
        if not 0 < self.positive_offset < self.negative_min_offset:
            raise ValidationError(
                f"offsets must satisfy 0 < positive ({self.positive_offset}) "
                f"< negative_min ({self.negative_min_offset})"
            )


@dataclass(frozen=True)
class DataSettings:
    source: DomainConfig = default_source_domain()
    target: DomainConfig = default_target_domain()
    sizes: SplitSizes = SplitSizes()

    def validate(self) -> None:
        self.source.validate()
        self.target.validate()
        self.sizes.validate()


@dataclass(frozen=True)
class RunConfig:
    version: int = CONFIG_VERSION
    model: ModelConfig = ModelConfig()
    adapter: AdapterConfig = TOY_ADAPTER
    lora: LoraConfig = LoraConfig()
    loss: LossConfig = LossConfig()
    data: DataSettings = DataSettings()
    train: TrainSettings = TrainSettings()
    ttda: TTDASettings = TTDASettings()

    def validate(self) -> "RunConfig":
        if self.version != CONFIG_VERSION:
            raise ValidationError(
                f"unsupported config version {self.version!r}; expected {CONFIG_VERSION}"
            )
        self.model.validate()
        self.adapter.validate()
        self.lora.validate()
        self.data.validate()
        self.train.validate()
        self.ttda.validate()
        if self.loss.confidence_fraction <= 0 or self.loss.confidence_fraction > 1:
            raise ValidationError("loss.confidence_fraction must be in (0, 1]")
        return self


def default_config() -> RunConfig:
    return RunConfig()


def _coerce(cls, default, payload: dict):
    """Strict overlay of a JSON object onto a frozen dataclass instance."""
    if not isinstance(payload, dict):
        raise ValidationError(f"{cls.__name__} section must be an object, got {type(payload).__name__}")
    allowed = {f.name: f for f in fields(cls)}
    unknown = sorted(set(payload) - set(allowed))
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    updates = {}
    for key, value in payload.items():
        current = getattr(default, key)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        updates[key] = value
    return replace(default, **updates)


_SECTIONS = {
    "model": (ModelConfig, lambda cfg: cfg.model),
    "adapter": (AdapterConfig, lambda cfg: cfg.adapter),
    "lora": (LoraConfig, lambda cfg: cfg.lora),
    "loss": (LossConfig, lambda cfg: cfg.loss),
    "train": (TrainSettings, lambda cfg: cfg.train),
    "ttda": (TTDASettings, lambda cfg: cfg.ttda),
}


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ValidationError("config document must be a JSON object")
    base = default_config()
    known = {"version", "data", *_SECTIONS}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValidationError(f"unknown config sections: {', '.join(unknown)}")
    sections = {}
    for name, (cls, getter) in _SECTIONS.items():
        sections[name] = _coerce(cls, getter(base), doc.get(name, {}))
    data_doc = doc.get("data", {})
    if not isinstance(data_doc, dict):
        raise ValidationError("data section must be an object")
    unknown = sorted(set(data_doc) - {"source", "target", "sizes"})
    if unknown:
        raise ValidationError(f"unknown data keys: {', '.join(unknown)}")
    data = DataSettings(
        source=_coerce(DomainConfig, base.data.source, data_doc.get("source", {})),
        target=_coerce(DomainConfig, base.data.target, data_doc.get("target", {})),
        sizes=_coerce(SplitSizes, base.data.sizes, data_doc.get("sizes", {})),
    )
    cfg = RunConfig(
        version=doc.get("version", CONFIG_VERSION),
        data=data,
        **sections,
    )
    return cfg.validate()


def config_to_dict(cfg: RunConfig) -> dict:
    # Callers may hand us Path objects for fields typed as str (init_from,
    # data roots); JSON round-tripping must not care.
    def scrub(value):
        if isinstance(value, Path):
            return str(value)
        if isinstance(value, dict):
            return {key: scrub(inner) for key, inner in value.items()}
        if isinstance(value, list):
            return [scrub(inner) for inner in value]
        return value

    return scrub(asdict(cfg))


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(doc)


def save_config(path: str | Path, cfg: RunConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))
