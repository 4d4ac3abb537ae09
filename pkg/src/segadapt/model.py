"""Promptable single-mask segmentation model at desk scale.

A small ViT encoder turns the image into a grid of embeddings, point prompts
become tokens (sinusoidal position code plus a learned label embedding), and
a two-way transformer decoder exchanges information between tokens and the
dense grid before upsampling back to pixel resolution.  The decoder exposes a
hook on its dense-embedding output per layer and the encoder a hook per
block; the adapter module wires into these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, ValidationError
from .params import Init, ParameterRegistry
from .tensor import (
    Tensor,
    add_bias,
    concat,
    gather_rows,
    layer_norm,
    no_grad,
    softmax,
)

POSITIVE = 1
NEGATIVE = 0


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    patch_size: int = 8
    enc_dim: int = 128
    enc_depth: int = 6
    enc_heads: int = 4
    dec_dim: int = 64
    dec_depth: int = 2
    dec_heads: int = 2
    num_mask_tokens: int = 1
    mlp_ratio: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.image_size <= 0 or self.image_size % self.patch_size:
            raise ValidationError(
                f"image_size {self.image_size} must be a positive multiple of patch_size {self.patch_size}"
            )
        if self.patch_size < 2 or self.patch_size & (self.patch_size - 1):
            raise ValidationError(f"patch_size {self.patch_size} must be a power of two >= 2")
        if self.enc_dim % self.enc_heads:
            raise ValidationError(f"enc_dim {self.enc_dim} not divisible by enc_heads {self.enc_heads}")
        if self.dec_dim % self.dec_heads:
            raise ValidationError(f"dec_dim {self.dec_dim} not divisible by dec_heads {self.dec_heads}")
        if self.dec_dim % 4:
            raise ValidationError(f"dec_dim {self.dec_dim} must be divisible by 4 for the position code")
        if self.dec_dim % (1 << self.upsample_stages):
            raise ValidationError(
                f"dec_dim {self.dec_dim} must be divisible by {1 << self.upsample_stages} "
                f"(one channel halving per upsample stage)"
            )
        if self.num_mask_tokens != 1:
            raise ValidationError("single-mask model: num_mask_tokens must be 1")
        if min(self.enc_depth, self.dec_depth, self.mlp_ratio) < 1:
            raise ValidationError("depths and mlp_ratio must be >= 1")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size * self.grid_size

    @property
    def upsample_stages(self) -> int:
        return int(math.log2(self.patch_size))

    @property
    def pixel_feature_dim(self) -> int:
        return self.dec_dim >> self.upsample_stages


@dataclass(frozen=True)
class PromptSet:
    """Point prompts: (x, y, label) with label 1 = foreground, 0 = background."""

    points: tuple[tuple[float, float, int], ...]

    def __init__(self, points: Sequence[Sequence[float]]):
        object.__setattr__(self, "points", tuple(tuple(p) for p in points))

    def validate(self, image_size: int) -> None:
        if not self.points:
            raise ValidationError("prompt set must contain at least one point")
        for x, y, label in self.points:
            if not (0 <= x <= image_size - 1 and 0 <= y <= image_size - 1):
                raise ValidationError(
                    f"prompt point ({x}, {y}) outside image bounds [0, {image_size - 1}]"
                )
            if label not in (POSITIVE, NEGATIVE):
                raise ValidationError(f"prompt label must be 0 or 1, got {label}")

    def permuted(self, order: Sequence[int]) -> "PromptSet":
        return PromptSet([self.points[i] for i in order])


@dataclass
class ImageEmbedding:
    grid: Tensor  # [num_patches, dec_dim]
    height: int
    width: int


@dataclass
class DecoderState:
    tokens: Tensor  # [2 + num_prompts, dec_dim]: mask token, IoU token, prompts
    dense: Tensor  # [num_patches, dec_dim]


@dataclass
class ForwardResult:
    logits: Tensor  # [image_size, image_size]
    iou_pred: Tensor  # scalar in (0, 1)
    dense: Tensor  # final dense embeddings after the decoder (and hooks)


@dataclass
class MaskPrediction:
    logits: np.ndarray
    iou_pred: float

    @property
    def probabilities(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-self.logits))

    @property
    def mask(self) -> np.ndarray:
        return self.probabilities >= 0.5


class SegmentationModel:
    """Parameter registry plus the forward graph builders."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.registry = ParameterRegistry(dtype=dtype)
        # Hook points used by the adapter/LoRA attachments.
        self.encoder_hook: Callable[[Tensor, int], Tensor] | None = None
        self.dense_hook: Callable[[Tensor, int], Tensor] | None = None
        self.lora_deltas: dict[str, tuple[Tensor, Tensor, float]] = {}
        self._declare_parameters()
        self.registry.initialize(cfg.seed)

    # -- parameter declaration -------------------------------------------------

    def _declare_attention(self, prefix: str, dim: int) -> None:
        for proj in ("query", "key", "value", "out"):
            self.registry.add(f"{prefix}.{proj}.weight", (dim, dim), Init.lecun())
            self.registry.add(f"{prefix}.{proj}.bias", (dim,), Init.zeros())

    def _declare_norm(self, prefix: str, dim: int) -> None:
        self.registry.add(f"{prefix}.gain", (dim,), Init.constant(1.0))
        self.registry.add(f"{prefix}.bias", (dim,), Init.zeros())

    def _declare_mlp(self, prefix: str, dim: int, hidden: int, out: int | None = None) -> None:
        self.registry.add(f"{prefix}.fc1.weight", (dim, hidden), Init.lecun())
        self.registry.add(f"{prefix}.fc1.bias", (hidden,), Init.zeros())
        self.registry.add(f"{prefix}.fc2.weight", (hidden, out or dim), Init.lecun())
        self.registry.add(f"{prefix}.fc2.bias", (out or dim,), Init.zeros())

    def _declare_parameters(self) -> None:
        cfg = self.cfg
        patch_dim = cfg.patch_size * cfg.patch_size
        reg = self.registry
        reg.add("encoder.patch_embed.weight", (patch_dim, cfg.enc_dim), Init.lecun())
        reg.add("encoder.patch_embed.bias", (cfg.enc_dim,), Init.zeros())
        reg.add("encoder.pos_embed", (cfg.num_patches, cfg.enc_dim), Init.normal(0.02))
        for i in range(cfg.enc_depth):
            p = f"encoder.block{i}"
            self._declare_norm(f"{p}.norm1", cfg.enc_dim)
            self._declare_attention(f"{p}.attn", cfg.enc_dim)
            self._declare_norm(f"{p}.norm2", cfg.enc_dim)
            self._declare_mlp(f"{p}.mlp", cfg.enc_dim, cfg.mlp_ratio * cfg.enc_dim)
        reg.add("encoder.neck.weight", (cfg.enc_dim, cfg.dec_dim), Init.lecun())
        reg.add("encoder.neck.bias", (cfg.dec_dim,), Init.zeros())

        reg.add("prompt.label_embed", (2, cfg.dec_dim), Init.normal(0.02))

        reg.add("decoder.mask_token", (1, cfg.dec_dim), Init.normal(0.02))
        reg.add("decoder.iou_token", (1, cfg.dec_dim), Init.normal(0.02))
        for i in range(cfg.dec_depth):
            p = f"decoder.layer{i}"
            self._declare_attention(f"{p}.self_attn", cfg.dec_dim)
            self._declare_norm(f"{p}.norm1", cfg.dec_dim)
            self._declare_attention(f"{p}.cross_token_to_image", cfg.dec_dim)
            self._declare_norm(f"{p}.norm2", cfg.dec_dim)
            self._declare_mlp(f"{p}.mlp", cfg.dec_dim, cfg.mlp_ratio * cfg.dec_dim)
            self._declare_norm(f"{p}.norm3", cfg.dec_dim)
            self._declare_attention(f"{p}.cross_image_to_token", cfg.dec_dim)
            self._declare_norm(f"{p}.norm4", cfg.dec_dim)
        chans = cfg.dec_dim
        for s in range(cfg.upsample_stages):
            reg.add(f"decoder.upsample{s}.weight", (chans, 2 * chans), Init.lecun())
            reg.add(f"decoder.upsample{s}.bias", (2 * chans,), Init.zeros())
            chans //= 2
        self._declare_mlp("decoder.mask_mlp", cfg.dec_dim, cfg.dec_dim, out=cfg.dec_dim)
        reg.add("decoder.mask_mlp.fc3.weight", (cfg.dec_dim, cfg.pixel_feature_dim), Init.lecun())
        reg.add("decoder.mask_mlp.fc3.bias", (cfg.pixel_feature_dim,), Init.zeros())
        self._declare_mlp("decoder.iou_mlp", cfg.dec_dim, cfg.dec_dim, out=cfg.dec_dim)
        reg.add("decoder.iou_mlp.fc3.weight", (cfg.dec_dim, 1), Init.lecun())
        reg.add("decoder.iou_mlp.fc3.bias", (1,), Init.zeros())

    # -- building blocks ---------------------------------------------------------

    def _proj(self, name: str, x: Tensor) -> Tensor:
        y = x @ self.registry.get(f"{name}.weight")
        delta = self.lora_deltas.get(name)
        if delta is not None:
            down, up, scale = delta
            y = y + ((x @ down) @ up) * scale
        return add_bias(y, self.registry.get(f"{name}.bias"))

    def _attention(self, prefix: str, heads: int, q_in: Tensor, k_in: Tensor, v_in: Tensor) -> Tensor:
        q = self._proj(f"{prefix}.query", q_in)
        k = self._proj(f"{prefix}.key", k_in)
        v = self._proj(f"{prefix}.value", v_in)
        dim = q.shape[1]
        head_dim = dim // heads
        scale = 1.0 / math.sqrt(head_dim)
        n_q, n_k = q.shape[0], k.shape[0]
        if heads == 1:
            weights = softmax((q @ k.T) * scale, axis=1)
            mixed = weights @ v
        else:
            q3 = q.reshape(n_q, heads, head_dim).permute(1, 0, 2)
            k3 = k.reshape(n_k, heads, head_dim).permute(1, 2, 0)
            v3 = v.reshape(n_k, heads, head_dim).permute(1, 0, 2)
            weights = softmax((q3 @ k3) * scale, axis=2)
            mixed = (weights @ v3).permute(1, 0, 2).reshape(n_q, dim)
        return self._proj(f"{prefix}.out", mixed)

    def _norm(self, prefix: str, x: Tensor) -> Tensor:
        return layer_norm(x, self.registry.get(f"{prefix}.gain"), self.registry.get(f"{prefix}.bias"))

    def _mlp(self, prefix: str, x: Tensor) -> Tensor:
        h = add_bias(x @ self.registry.get(f"{prefix}.fc1.weight"), self.registry.get(f"{prefix}.fc1.bias"))
        return add_bias(h.gelu() @ self.registry.get(f"{prefix}.fc2.weight"), self.registry.get(f"{prefix}.fc2.bias"))

    def _head_mlp(self, prefix: str, x: Tensor) -> Tensor:
        reg = self.registry
        h = add_bias(x @ reg.get(f"{prefix}.fc1.weight"), reg.get(f"{prefix}.fc1.bias")).relu()
        h = add_bias(h @ reg.get(f"{prefix}.fc2.weight"), reg.get(f"{prefix}.fc2.bias")).relu()
        return add_bias(h @ reg.get(f"{prefix}.fc3.weight"), reg.get(f"{prefix}.fc3.bias"))

    # -- encoder -------------------------------------------------------------------

    def patch_tokens(self, image: np.ndarray) -> Tensor:
        """Pre-attention tokens: patchify, linear embed, add position embedding."""
        cfg = self.cfg
        image = np.asarray(image)
        if image.shape != (cfg.image_size, cfg.image_size):
            raise DimensionError(
                f"image shape {image.shape} != ({cfg.image_size}, {cfg.image_size})"
            )
        g, p = cfg.grid_size, cfg.patch_size
        patches = (
            image.astype(self.registry.dtype)
            .reshape(g, p, g, p)
            .transpose(0, 2, 1, 3)
            .reshape(cfg.num_patches, p * p)
        )
        x = add_bias(
            Tensor(patches) @ self.registry.get("encoder.patch_embed.weight"),
            self.registry.get("encoder.patch_embed.bias"),
        )
        return x + self.registry.get("encoder.pos_embed")

    def encode_image(self, image: np.ndarray) -> ImageEmbedding:
        cfg = self.cfg
        x = self.patch_tokens(image)
        for i in range(cfg.enc_depth):
            p = f"encoder.block{i}"
            h = self._norm(f"{p}.norm1", x)
            x = x + self._attention(f"{p}.attn", cfg.enc_heads, h, h, h)
            x = x + self._mlp(f"{p}.mlp", self._norm(f"{p}.norm2", x))
            if self.encoder_hook is not None:
                x = self.encoder_hook(x, i)
        grid = add_bias(
            x @ self.registry.get("encoder.neck.weight"), self.registry.get("encoder.neck.bias")
        )
        return ImageEmbedding(grid=grid, height=cfg.grid_size, width=cfg.grid_size)

    # -- prompts ---------------------------------------------------------------------

    def _position_code(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Sinusoidal code of normalized coordinates, log-spaced frequencies."""
        cfg = self.cfg
        n_freq = cfg.dec_dim // 4
        max_freq = max(2.0, cfg.image_size / 2.0)
        freqs = 2.0 ** np.linspace(0.0, math.log2(max_freq), n_freq)
        out = np.empty((xs.size, cfg.dec_dim), dtype=np.float64)
        for axis, coords in enumerate((xs, ys)):
            phase = 2.0 * math.pi * np.outer(coords / cfg.image_size, freqs)
            base = axis * 2 * n_freq
            out[:, base : base + n_freq] = np.sin(phase)
            out[:, base + n_freq : base + 2 * n_freq] = np.cos(phase)
        return out

    def encode_prompts(self, prompts: PromptSet) -> Tensor:
        cfg = self.cfg
        prompts.validate(cfg.image_size)
        xs = np.array([p[0] for p in prompts.points], dtype=np.float64)
        ys = np.array([p[1] for p in prompts.points], dtype=np.float64)
        labels = [int(p[2]) for p in prompts.points]
        code = Tensor(self._position_code(xs, ys).astype(self.registry.dtype))
        return code + gather_rows(self.registry.get("prompt.label_embed"), labels)

    # -- decoder ------------------------------------------------------------------------

    def twoway_layer(self, state: DecoderState, layer: int) -> DecoderState:
        """One token<->image exchange; residual + layer-norm per sub-block."""
        cfg = self.cfg
        p = f"decoder.layer{layer}"
        t, d = state.tokens, state.dense
        t = self._norm(f"{p}.norm1", t + self._attention(f"{p}.self_attn", cfg.dec_heads, t, t, t))
        t = self._norm(
            f"{p}.norm2", t + self._attention(f"{p}.cross_token_to_image", cfg.dec_heads, t, d, d)
        )
        t = self._norm(f"{p}.norm3", t + self._mlp(f"{p}.mlp", t))
        d = self._norm(
            f"{p}.norm4", d + self._attention(f"{p}.cross_image_to_token", cfg.dec_heads, d, t, t)
        )
        return DecoderState(tokens=t, dense=d)

    def decode(self, embedding: ImageEmbedding, prompt_tokens: Tensor) -> ForwardResult:
        cfg = self.cfg
        reg = self.registry
        tokens = concat(
            [reg.get("decoder.mask_token"), reg.get("decoder.iou_token"), prompt_tokens], axis=0
        )
        state = DecoderState(tokens=tokens, dense=embedding.grid)
        for layer in range(cfg.dec_depth):
            state = self.twoway_layer(state, layer)
            if self.dense_hook is not None:
                state = DecoderState(state.tokens, self.dense_hook(state.dense, layer))

        feat = state.dense
        h, w = embedding.height, embedding.width
        for s in range(cfg.upsample_stages):
            c = feat.shape[1]
            feat = add_bias(feat @ reg.get(f"decoder.upsample{s}.weight"), reg.get(f"decoder.upsample{s}.bias"))
            # each token expands into a 2x2 spatial block with half the channels
            feat = (
                feat.reshape(h, w, 2, 2, c // 2)
                .permute(0, 2, 1, 3, 4)
                .reshape(2 * h * 2 * w, c // 2)
            )
            h, w = 2 * h, 2 * w

        mask_vec = self._head_mlp("decoder.mask_mlp", state.tokens[0:1])  # [1, pixel_dim]
        logits = (feat @ mask_vec.T).reshape(cfg.image_size, cfg.image_size)
        iou_pred = self._head_mlp("decoder.iou_mlp", state.tokens[1:2]).sigmoid().reshape(())
        return ForwardResult(logits=logits, iou_pred=iou_pred, dense=state.dense)

    # -- entry points ----------------------------------------------------------------------

    def forward(self, image: np.ndarray, prompts: PromptSet) -> ForwardResult:
        return self.decode(self.encode_image(image), self.encode_prompts(prompts))

    def predict(self, image: np.ndarray, prompts: PromptSet) -> MaskPrediction:
        with no_grad():
            result = self.forward(image, prompts)
        return MaskPrediction(logits=result.logits.data.copy(), iou_pred=result.iou_pred.item())

    def predict_batch(self, images: Sequence[np.ndarray], prompt_sets: Sequence[PromptSet]) -> list[MaskPrediction]:
        if len(images) != len(prompt_sets):
            raise DimensionError(f"batch mismatch: {len(images)} images, {len(prompt_sets)} prompt sets")
        return [self.predict(img, ps) for img, ps in zip(images, prompt_sets)]
