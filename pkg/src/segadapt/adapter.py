"""Gated prompt-attention adapters, LoRA deltas, and freeze policies.

Each adapted layer owns a small bank of learnable prompt vectors.  The layer's
dense embeddings attend over that bank (embeddings as queries, prompts as keys
and values) and the result is folded back in through a scalar gate that starts
at zero, so a freshly attached adapter leaves the base model's outputs intact.

Attachment wires into the model's dense/encoder hooks and registers the new
parameters under the "adapter." name prefix, which is what checkpoint
prefix-filtering and the freeze policies key on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import ContractError, ValidationError
from .model import SegmentationModel
from .params import Init, ParameterRegistry
from .tensor import Tensor, add_bias, softmax

METHODS = ("full_ft", "decoder_ft", "lora", "sam_da_dec", "sam_da_enc")


@dataclass(frozen=True)
class AdapterConfig:
    num_prompts: int = 2
    prompt_dim: int = 512
    key_dim: int = 256
    value_dim: int = 256
    placement: str = "decoder"
    encoder_adapted_blocks: int | None = None
    init_scale: float = 0.02

    def validate(self) -> None:
        if self.num_prompts < 1:
            raise ValidationError(f"num_prompts must be >= 1, got {self.num_prompts}")
        if min(self.prompt_dim, self.key_dim, self.value_dim) < 1:
            raise ValidationError("adapter dims must be >= 1")
        if self.placement not in ("decoder", "encoder"):
            raise ValidationError(f"placement must be 'decoder' or 'encoder', got {self.placement!r}")
        if self.init_scale <= 0:
            raise ValidationError(f"init_scale must be positive, got {self.init_scale}")

    def resolved_encoder_blocks(self, enc_depth: int) -> int:
        # Default: adapt the final five-sixths of the blocks, rounded up.
        n = self.encoder_adapted_blocks
        if n is None:
            n = math.ceil(5 * enc_depth / 6)
        if not 1 <= n <= enc_depth:
            raise ValidationError(
                f"encoder_adapted_blocks {n} out of range [1, {enc_depth}]"
            )
        return n


@dataclass(frozen=True)
class LoraConfig:
    rank: int = 4
    alpha: float | None = None  # defaults to 2 * rank
    targets: tuple[str, ...] = ("query", "value")

    def validate(self) -> None:
        if self.rank < 1:
            raise ValidationError(f"rank must be >= 1, got {self.rank}")
        if not self.targets:
            raise ValidationError("at least one target projection required")
        for t in self.targets:
            if t not in ("query", "key", "value", "out"):
                raise ValidationError(f"unknown LoRA target {t!r}")

    @property
    def scaling(self) -> float:
        alpha = 2.0 * self.rank if self.alpha is None else self.alpha
        return alpha / self.rank


@dataclass
class AdapterLayerState:
    """Per-layer adapter parameters, resolved from the registry by scope."""

    prompts: Tensor  # [N, prompt_dim]
    gate: Tensor  # scalar, zero at construction
    query_w: Tensor
    query_b: Tensor
    key_w: Tensor  # no bias: softmax cancels a per-query additive constant
    value_w: Tensor
    value_b: Tensor
    proj_w: Tensor
    proj_b: Tensor
    post_w: Tensor  # identity at construction
    post_b: Tensor


@dataclass
class AdapterAttachment:
    placement: str
    config: AdapterConfig
    layer_indices: list[int]
    states: dict[int, AdapterLayerState]


def declare_adapter_layer(
    registry: ParameterRegistry, scope: str, token_dim: int, cfg: AdapterConfig
) -> AdapterLayerState:
    """Register one layer's adapter parameters under `scope` and return views."""
    add = registry.add
    add(f"{scope}.prompts", (cfg.num_prompts, cfg.prompt_dim), Init.normal(cfg.init_scale))
    add(f"{scope}.gate", (), Init.zeros())
    add(f"{scope}.query.weight", (token_dim, cfg.key_dim), Init.lecun())
    add(f"{scope}.query.bias", (cfg.key_dim,), Init.zeros())
    add(f"{scope}.key.weight", (cfg.prompt_dim, cfg.key_dim), Init.lecun())
    add(f"{scope}.value.weight", (cfg.prompt_dim, cfg.value_dim), Init.lecun())
    add(f"{scope}.value.bias", (cfg.value_dim,), Init.zeros())
    add(f"{scope}.proj.weight", (cfg.value_dim, token_dim), Init.lecun())
    add(f"{scope}.proj.bias", (token_dim,), Init.zeros())
    add(f"{scope}.post.weight", (token_dim, token_dim), Init.identity())
    add(f"{scope}.post.bias", (token_dim,), Init.zeros())
    g = registry.get
    return AdapterLayerState(
        prompts=g(f"{scope}.prompts"),
        gate=g(f"{scope}.gate"),
        query_w=g(f"{scope}.query.weight"),
        query_b=g(f"{scope}.query.bias"),
        key_w=g(f"{scope}.key.weight"),
        value_w=g(f"{scope}.value.weight"),
        value_b=g(f"{scope}.value.bias"),
        proj_w=g(f"{scope}.proj.weight"),
        proj_b=g(f"{scope}.proj.bias"),
        post_w=g(f"{scope}.post.weight"),
        post_b=g(f"{scope}.post.bias"),
    )


def adapter_attention(tokens: Tensor, st: AdapterLayerState) -> Tensor:
    """Embeddings attend over the prompt bank; scores divided by sqrt(value dim)."""
    q = add_bias(tokens @ st.query_w, st.query_b)
    k = st.prompts @ st.key_w
    v = add_bias(st.prompts @ st.value_w, st.value_b)
    scale = 1.0 / math.sqrt(v.shape[1])
    mixed = softmax((q @ k.T) * scale, axis=1) @ v
    return add_bias(mixed @ st.proj_w, st.proj_b)


def adapter_apply(tokens: Tensor, st: AdapterLayerState) -> Tensor:
    """Gated correction then output projection: post(tokens + gate * attention)."""
    corrected = tokens + adapter_attention(tokens, st) * st.gate
    return add_bias(corrected @ st.post_w, st.post_b)


def _guard_fresh(model: SegmentationModel, prefix: str) -> None:
    for name in model.registry.names():
        if name.startswith(prefix):
            raise ContractError(f"adapter already attached: found parameter {name!r}")


def attach_decoder_adapter(
    model: SegmentationModel, cfg: AdapterConfig, seed: int = 0
) -> AdapterAttachment:
    """One adapter per decoder layer, applied to the dense-embedding output."""
    cfg.validate()
    if cfg.placement != "decoder":
        raise ValidationError(f"decoder attachment requires placement 'decoder', got {cfg.placement!r}")
    _guard_fresh(model, "adapter.dec")
    if model.dense_hook is not None:
        raise ContractError("model already has a dense hook")
    indices = list(range(model.cfg.dec_depth))
    states = {
        i: declare_adapter_layer(model.registry, f"adapter.dec{i}", model.cfg.dec_dim, cfg)
        for i in indices
    }
    model.registry.initialize(
        seed, only=[n for n in model.registry.names() if n.startswith("adapter.dec")]
    )
    model.dense_hook = lambda dense, layer: adapter_apply(dense, states[layer])
    apply_freeze_policy(model, "sam_da_dec")
    return AdapterAttachment("decoder", cfg, indices, states)


def attach_encoder_adapter(
    model: SegmentationModel, cfg: AdapterConfig, seed: int = 0
) -> AdapterAttachment:
    """Adapters on the final encoder blocks, applied to each block's tokens."""
    cfg.validate()
    if cfg.placement != "encoder":
        raise ValidationError(f"encoder attachment requires placement 'encoder', got {cfg.placement!r}")
    _guard_fresh(model, "adapter.enc")
    if model.encoder_hook is not None:
        raise ContractError("model already has an encoder hook")
    depth = model.cfg.enc_depth
    count = cfg.resolved_encoder_blocks(depth)
    indices = list(range(depth - count, depth))
    states = {
        i: declare_adapter_layer(model.registry, f"adapter.enc{i}", model.cfg.enc_dim, cfg)
        for i in indices
    }
    model.registry.initialize(
        seed, only=[n for n in model.registry.names() if n.startswith("adapter.enc")]
    )
    model.encoder_hook = lambda x, i: adapter_apply(x, states[i]) if i in states else x
    apply_freeze_policy(model, "sam_da_enc")
    return AdapterAttachment("encoder", cfg, indices, states)


def attach_lora(model: SegmentationModel, cfg: LoraConfig, seed: int = 0) -> list[str]:
    """Low-rank deltas on encoder attention projections; up-projection zero-init."""
    cfg.validate()
    _guard_fresh(model, "lora.")
    dim = model.cfg.enc_dim
    if cfg.rank > dim:
        raise ValidationError(f"rank {cfg.rank} exceeds projection dim {dim}")
    reg = model.registry
    attached: list[str] = []
    for i in range(model.cfg.enc_depth):
        for target in cfg.targets:
            scope = f"lora.block{i}.{target}"
            proj = f"encoder.block{i}.attn.{target}"
            if proj in model.lora_deltas:
                raise ContractError(f"projection {proj!r} already has a LoRA delta")
            reg.add(f"{scope}.down", (dim, cfg.rank), Init.lecun())
            reg.add(f"{scope}.up", (cfg.rank, dim), Init.zeros())
            attached.append(proj)
    reg.initialize(seed, only=[n for n in reg.names() if n.startswith("lora.")])
    for i in range(model.cfg.enc_depth):
        for target in cfg.targets:
            scope = f"lora.block{i}.{target}"
            model.lora_deltas[f"encoder.block{i}.attn.{target}"] = (
                reg.get(f"{scope}.down"),
                reg.get(f"{scope}.up"),
                cfg.scaling,
            )
    apply_freeze_policy(model, "lora")
    return attached


_POLICIES: dict[str, Callable[[str], bool]] = {
    "full_ft": lambda name: True,
    "decoder_ft": lambda name: name.startswith("decoder."),
    "lora": lambda name: name.startswith(("lora.", "decoder.")),
    "sam_da_dec": lambda name: name.startswith("adapter."),
    "sam_da_enc": lambda name: name.startswith(("adapter.", "decoder.")),
}


def trainable_predicate(method: str) -> Callable[[str], bool]:
    try:
        return _POLICIES[method]
    except KeyError:
        raise ValidationError(f"unknown method {method!r}; expected one of {METHODS}") from None


def apply_freeze_policy(model: SegmentationModel, method: str) -> tuple[int, int]:
    """Set trainability by name; returns (trainable, total) parameter counts."""
    model.registry.set_trainable(trainable_predicate(method))
    return _count_split(model.registry)


def trainable_fraction(model: SegmentationModel) -> float:
    trainable, total = _count_split(model.registry)
    return trainable / total


def _count_split(registry: ParameterRegistry) -> tuple[int, int]:
    trainable = total = 0
    for name in registry.names():
        n = registry.get(name).data.size
        total += n
        if registry.param(name).trainable:
            trainable += n
    return trainable, total


def adapter_param_count(cfg: AdapterConfig, token_dim: int, layer_count: int) -> int:
    """Closed-form trainable-parameter count for the adapter attachment.

    Per layer: prompt bank, gate, query/key/value/output projections (key
    carries no bias), and the square post projection.
    """
    cfg.validate()
    per_layer = (
        cfg.num_prompts * cfg.prompt_dim
        + 1
        + (token_dim * cfg.key_dim + cfg.key_dim)
        + cfg.prompt_dim * cfg.key_dim
        + (cfg.prompt_dim * cfg.value_dim + cfg.value_dim)
        + (cfg.value_dim * token_dim + token_dim)
        + (token_dim * token_dim + token_dim)
    )
    return per_layer * layer_count


def lora_param_count(cfg: LoraConfig, dim: int, blocks: int) -> int:
    """r * (d_in + d_out) per targeted projection."""
    cfg.validate()
    return cfg.rank * (dim + dim) * len(cfg.targets) * blocks
