"""Build the promptable segmentation model and click on a synthetic slice."""

import numpy as np

from segadapt import (
    ModelConfig,
    SegmentationModel,
    compute_iou,
    default_source_domain,
    generate_sample,
    interior_prompt,
)
from segadapt.engine import prompt_rng

cfg = ModelConfig()
model = SegmentationModel(cfg)
print(f"image {cfg.image_size}px, patch {cfg.patch_size} -> {cfg.num_patches} tokens")
print(f"encoder dim {cfg.enc_dim} x{cfg.enc_depth}, decoder dim {cfg.dec_dim} x{cfg.dec_depth}")
print(f"parameters: {model.registry.param_count():,}")

# one synthetic slice + the click an annotator would place
sample = generate_sample(default_source_domain(), volume_seed=7, slice_index=4)
prompts = interior_prompt(sample.mask, prompt_rng(0, 7, 4))
x, y, _ = prompts.points[0]
print(f"click at ({x:.0f}, {y:.0f}); foreground fraction {sample.mask.mean():.3f}")

pred = model.predict(sample.image, prompts)
print(f"untrained model: IoU {compute_iou(pred.mask, sample.mask):.3f}, "
      f"self-rated IoU {pred.iou_pred:.3f}")

# ascii view: ground truth on the left, prediction on the right
rows = []
for r in range(0, cfg.image_size, 4):
    gt = "".join("#" if sample.mask[r, c] else "." for c in range(0, cfg.image_size, 2))
    pr = "".join("#" if pred.mask[r, c] else "." for c in range(0, cfg.image_size, 2))
    rows.append(gt + "   " + pr)
print("\n".join(rows))
print("(left: truth, right: untrained prediction -- training is demo 05)")
