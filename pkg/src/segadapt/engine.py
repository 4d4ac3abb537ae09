"""Experiment engine: supervised training, evaluation, per-sample adaptation.

Protocol: a base model is fully trained on the source domain once, then each
method (full_ft, decoder_ft, lora, sam_da_dec, sam_da_enc) adapts from that
shared checkpoint under its freeze policy.  Evaluation prompts each mask with
one seeded interior click.  Test-time adaptation tunes the method's trainable
set per sample with unsupervised losses and restores the checkpoint bytes --
verified exactly -- before touching the next sample.

Every run writes JSON fragments; emit_report aggregates them, recomputing all
means from the stored per-image lists and refusing to report numbers that do
not reproduce.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .adapter import (
    AdapterConfig,
    LoraConfig,
    apply_freeze_policy,
    attach_decoder_adapter,
    attach_encoder_adapter,
    attach_lora,
)
from .checkpoint import dump_bytes, restore
from .config import RunConfig, config_to_dict
from .data import Sample, load_manifest, load_split
from .errors import ContractError, IntegrityError, ValidationError
from .losses import (
    compute_iou,
    confident_entropy_loss,
    proximity_loss,
    slice_contrastive_loss,
    supervised_loss,
)
from .model import ModelConfig, PromptSet, SegmentationModel
from .params import AdamWState, adamw_step
from .stats import paired_t_test
from .tensor import backward, no_grad

_PROMPT_TAG = 0x70726F6D
_SHUFFLE_TAG = 0x73687566

META_VERSION = 1
BASE_SEED = 100
METHOD_SEEDS = (0, 1, 2, 3)

# Mean confident-pixel entropy below this many nats means the confident set
# averages logit magnitudes past ~9: the prediction is saturated and entropy
# minimization has nothing left to shave off.
ENTROPY_FLOOR = 1e-4


def entropy_improved(before: float, after: float) -> bool:
    """Whether adaptation lowered confident-pixel entropy for one sample.

    Already-saturated samples count as improved only while they stay at the
    floor; a strict decrease of a quantity at roundoff scale is noise, but a
    climb off the floor is a real regression.
    """
    if before <= ENTROPY_FLOOR:
        return after <= ENTROPY_FLOOR
    return after < before


# -- prompting ----------------------------------------------------------------


def prompt_rng(seed: int, volume_id: int, slice_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([_PROMPT_TAG, seed, volume_id, slice_index])
    )


def interior_prompt(mask: np.ndarray, rng: np.random.Generator, jitter: int = 2) -> PromptSet:
    """One positive click: the interior point nearest the mask centroid,
    jittered a couple of pixels but never off the mask."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValidationError("cannot prompt an empty mask")
    cy, cx = ys.mean(), xs.mean()
    idx = int(np.argmin((ys - cy) ** 2 + (xs - cx) ** 2))
    y, x = int(ys[idx]), int(xs[idx])
    dy, dx = (int(v) for v in rng.integers(-jitter, jitter + 1, size=2))
    yj, xj = y + dy, x + dx
    h, w = mask.shape
    if 0 <= yj < h and 0 <= xj < w and mask[yj, xj]:
        y, x = yj, xj
    return PromptSet([(float(x), float(y), 1)])


# -- evaluation ----------------------------------------------------------------


@dataclass
class EvalResult:
    per_image: list[float]
    mean: float
    std: float

    @classmethod
    def from_scores(cls, scores: list[float]) -> "EvalResult":
        arr = np.asarray(scores, dtype=np.float64)
        return cls(per_image=[float(v) for v in scores], mean=float(arr.mean()), std=float(arr.std()))


def evaluate_with_predictor(
    predict: Callable[[np.ndarray, PromptSet], object],
    samples: Sequence[Sample],
    seed: int,
) -> EvalResult:
    """IoU of binarized predictions against ground truth, one click per image."""
    scores = []
    for s in samples:
        prompts = interior_prompt(s.mask, prompt_rng(seed, s.volume_id, s.slice_index))
        pred = predict(s.image, prompts)
        scores.append(compute_iou(pred.mask, s.mask))
    return EvalResult.from_scores(scores)


def evaluate_model(model: SegmentationModel, samples: Sequence[Sample], seed: int) -> EvalResult:
    return evaluate_with_predictor(model.predict, samples, seed)


# -- checkpoint + sidecar -----------------------------------------------------------


def _meta_path(checkpoint: str | Path) -> Path:
    return Path(str(checkpoint) + ".meta.json")


def save_checkpoint(
    checkpoint: str | Path,
    weights: bytes,
    method: str,
    model_cfg: ModelConfig,
    adapter_cfg: AdapterConfig | None,
    lora_cfg: LoraConfig | None,
    seed: int,
) -> None:
    path = Path(checkpoint)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(weights)
    meta = {
        "meta_version": META_VERSION,
        "method": method,
        "seed": seed,
        "model": asdict(model_cfg),
        "adapter": asdict(adapter_cfg) if adapter_cfg else None,
        "lora": asdict(lora_cfg) if lora_cfg else None,
    }
    _meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_model(checkpoint: str | Path) -> tuple[SegmentationModel, dict]:
    """Rebuild the trained model from a checkpoint plus its JSON sidecar."""
    path = Path(checkpoint)
    if not path.exists():
        raise ValidationError(f"checkpoint not found: {path}")
    meta_path = _meta_path(path)
    if not meta_path.exists():
        raise ValidationError(f"checkpoint sidecar not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("meta_version") != META_VERSION:
        raise ValidationError(f"unsupported checkpoint meta version in {meta_path}")
    model = SegmentationModel(ModelConfig(**meta["model"]))
    if meta.get("adapter"):
        acfg = AdapterConfig(**meta["adapter"])
        if acfg.placement == "decoder":
            attach_decoder_adapter(model, acfg)
        else:
            attach_encoder_adapter(model, acfg)
    if meta.get("lora"):
        raw = dict(meta["lora"])
        raw["targets"] = tuple(raw["targets"])
        attach_lora(model, LoraConfig(**raw))
    apply_freeze_policy(model, meta["method"])
    restore(model.registry, path)
    return model, meta


# -- supervised training -------------------------------------------------------------


def _trainable_counts(model: SegmentationModel) -> tuple[int, int]:
    return model.registry.param_count(trainable_only=True), model.registry.param_count()


def _attach_for_method(model: SegmentationModel, cfg: RunConfig):
    """Wire the method's mechanism and freeze policy; returns configs used."""
    method = cfg.train.method
    adapter_cfg = lora_cfg = None
    if method == "sam_da_dec":
        adapter_cfg = replace(cfg.adapter, placement="decoder")
        attach_decoder_adapter(model, adapter_cfg, seed=cfg.train.seed)
    elif method == "sam_da_enc":
        adapter_cfg = replace(cfg.adapter, placement="encoder")
        attach_encoder_adapter(model, adapter_cfg, seed=cfg.train.seed)
    elif method == "lora":
        lora_cfg = cfg.lora
        attach_lora(model, lora_cfg, seed=cfg.train.seed)
    else:
        apply_freeze_policy(model, method)
    return adapter_cfg, lora_cfg


def _chunks(order: np.ndarray, size: int):
    for start in range(0, len(order), size):
        yield order[start : start + size]


def train_supervised(cfg: RunConfig, data_root: str | Path, out_dir: str | Path) -> dict:
    """AdamW over the supervised loss on source training data.

    Audits that frozen parameters never moved, then writes the weights of
    the best-validation epoch as checkpoint + sidecar + a JSON fragment
    into out_dir.
    """
    cfg.validate()
    data_root = Path(data_root)
    out_dir = Path(out_dir)
    manifest = load_manifest(data_root)
    train_samples = load_split(data_root, manifest, "source_train")
    val_samples = load_split(data_root, manifest, "source_val")
    if cfg.train.max_train_samples is not None:
        if cfg.train.max_train_samples > len(train_samples):
            raise ValidationError(
                f"max_train_samples {cfg.train.max_train_samples} exceeds the "
                f"{len(train_samples)}-sample source_train split"
            )
        train_samples = train_samples[: cfg.train.max_train_samples]

    model = SegmentationModel(cfg.model)
    if cfg.train.init_from:
        init_path = Path(cfg.train.init_from)
        if not init_path.exists():
            raise ValidationError(f"init_from checkpoint not found: {init_path}")
        restore(model.registry, init_path)
    adapter_cfg, lora_cfg = _attach_for_method(model, cfg)
    trainable, total = _trainable_counts(model)

    frozen_before = {
        name: model.registry.get(name).data.copy()
        for name in model.registry.names()
        if not model.registry.param(name).trainable
    }

    opt = AdamWState(lr=cfg.train.lr, weight_decay=cfg.train.weight_decay)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([_SHUFFLE_TAG, cfg.train.seed]))
    seed = cfg.train.seed

    val = evaluate_model(model, val_samples, seed)
    val_curve = [val.mean]
    loss_curve: list[float] = []
    # Best-validation retention over trained epochs; the pre-training entry
    # val_curve[0] is context for the curve, never a retention candidate.
    best_val = -1.0
    best_bytes = dump_bytes(model.registry)

    for _epoch in range(cfg.train.epochs):
        order = shuffle_rng.permutation(len(train_samples))
        epoch_losses = []
        for batch in _chunks(order, cfg.train.batch_size):
            scale = 1.0 / len(batch)
            for idx in batch:
                s = train_samples[int(idx)]
                prompts = interior_prompt(s.mask, prompt_rng(seed, s.volume_id, s.slice_index))
                out = model.forward(s.image, prompts)
                total_loss, parts = supervised_loss(out.logits, out.iou_pred, s.mask, cfg.loss)
                backward(total_loss * scale)
                epoch_losses.append(parts["total"])
            model.registry.fill_missing_grads()
            adamw_step(model.registry, opt)
        loss_curve.append(float(np.mean(epoch_losses)))
        val = evaluate_model(model, val_samples, seed)
        val_curve.append(val.mean)
        if val.mean > best_val:
            best_val = val.mean
            best_bytes = dump_bytes(model.registry)

    for name, before in frozen_before.items():
        if not np.array_equal(model.registry.get(name).data, before):
            raise ContractError(f"frozen parameter {name!r} changed during training")

    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = out_dir / "checkpoint.sdck"
    save_checkpoint(checkpoint, best_bytes, cfg.train.method, cfg.model, adapter_cfg, lora_cfg, seed)
    fragment = {
        "kind": "train",
        "method": cfg.train.method,
        "seed": seed,
        "train_samples": len(train_samples),
        "loss_curve": loss_curve,
        "val_curve": val_curve,
        "best_val_iou": best_val,
        "trainable_params": trainable,
        "total_params": total,
        "checkpoint": str(checkpoint),
        "config": config_to_dict(cfg),
    }
    (out_dir / "fragment_train.json").write_text(json.dumps(fragment, indent=2, sort_keys=True))
    return fragment


def evaluate_checkpoint(
    checkpoint: str | Path,
    data_root: str | Path,
    domain: str,
    split: str,
    seed: int = 0,
    report_path: str | Path | None = None,
) -> dict:
    data_root = Path(data_root)
    manifest = load_manifest(data_root)
    if domain not in manifest["domains"]:
        raise ValidationError(
            f"domain {domain!r} absent from manifest; available: {sorted(manifest['domains'])}"
        )
    samples = load_split(data_root, manifest, f"{domain}_{split}")
    model, meta = load_model(checkpoint)
    result = evaluate_model(model, samples, seed)
    fragment = {
        "kind": "eval",
        "method": meta["method"],
        "seed": meta.get("seed", 0),
        "eval_seed": seed,
        "domain": domain,
        "split": split,
        "count": len(result.per_image),
        "per_image": result.per_image,
        "mean": result.mean,
        "std": result.std,
        "checkpoint": str(checkpoint),
    }
    if report_path is not None:
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        Path(report_path).write_text(json.dumps(fragment, indent=2, sort_keys=True))
    return fragment


# -- test-time adaptation ---------------------------------------------------------------


def _group_by_volume(samples: Sequence[Sample]) -> dict[int, dict[int, Sample]]:
    volumes: dict[int, dict[int, Sample]] = {}
    for s in samples:
        volumes.setdefault(s.volume_id, {})[s.slice_index] = s
    return volumes


def run_ttda(
    checkpoint: str | Path,
    data_root: str | Path,
    cfg: RunConfig,
    report_path: str | Path | None = None,
) -> dict:
    """Per-sample unsupervised adaptation with verified checkpoint resets.

    Checkpoints without any adapter get a fresh zero-gated decoder adapter
    (predictions initially unchanged); adapter checkpoints tune their own
    adapter.  After each sample the registry is restored and re-serialized,
    and any byte difference from the reference aborts the run.
    """
    cfg.validate()
    settings = cfg.ttda
    data_root = Path(data_root)
    manifest = load_manifest(data_root)
    samples = load_split(data_root, manifest, settings.split)
    volumes = _group_by_volume(samples)

    model, meta = load_model(checkpoint)
    if not any(n.startswith("adapter.") for n in model.registry.names()):
        attach_decoder_adapter(
            model, replace(cfg.adapter, placement="decoder"), seed=settings.seed
        )
    reference = dump_bytes(model.registry)

    q = cfg.loss.confidence_fraction
    adapt = (settings.lambda_entropy, settings.lambda_proximity, settings.lambda_contrastive) != (
        0.0,
        0.0,
        0.0,
    )
    # Pooled slice embeddings of the unadapted model, shared across samples.
    embed_cache: dict[tuple[int, int], np.ndarray] = {}

    def unadapted_embedding(s: Sample) -> np.ndarray:
        key = (s.volume_id, s.slice_index)
        if key not in embed_cache:
            prompts = interior_prompt(s.mask, prompt_rng(settings.seed, *key))
            with no_grad():
                out = model.forward(s.image, prompts)
            embed_cache[key] = out.dense.data.mean(axis=0).copy()
        return embed_cache[key]

    records = []
    for s in samples:
        prompts = interior_prompt(s.mask, prompt_rng(settings.seed, s.volume_id, s.slice_index))
        with no_grad():
            first = model.forward(s.image, prompts)
            entropy_before = confident_entropy_loss(first.logits, q).item()
        snapshot_probs = 1.0 / (1.0 + np.exp(-first.logits.data.astype(np.float64)))
        iou_before = compute_iou(snapshot_probs >= 0.5, s.mask)

        entropy_after = entropy_before
        iou_after = iou_before
        if adapt:
            volume = volumes[s.volume_id]
            pos_idx = next(
                (
                    s.slice_index + d
                    for d in (settings.positive_offset, -settings.positive_offset)
                    if s.slice_index + d in volume
                ),
                None,
            )
            neg_idxs = [
                i for i in sorted(volume) if abs(i - s.slice_index) >= settings.negative_min_offset
            ]
            positive = unadapted_embedding(volume[pos_idx]) if pos_idx is not None else None
            negatives = [unadapted_embedding(volume[i]) for i in neg_idxs]

            opt = AdamWState(lr=settings.lr, weight_decay=0.0)
            for _ in range(settings.iterations):
                out = model.forward(s.image, prompts)
                loss = None

                def accumulate(weight: float, term):
                    nonlocal loss
                    if weight == 0.0:
                        return
                    term = term * weight
                    loss = term if loss is None else loss + term

                accumulate(settings.lambda_entropy, confident_entropy_loss(out.logits, q))
                accumulate(
                    settings.lambda_proximity,
                    proximity_loss(
                        out.logits,
                        snapshot_probs,
                        gamma=cfg.loss.focal_gamma,
                        smooth=cfg.loss.dice_smooth,
                    ),
                )
                if positive is not None and negatives:
                    accumulate(
                        settings.lambda_contrastive,
                        slice_contrastive_loss(
                            out.dense.mean(axis=0),
                            positive,
                            negatives,
                            temperature=cfg.loss.temperature,
                        ),
                    )
                backward(loss)
                model.registry.fill_missing_grads()
                adamw_step(model.registry, opt)

            with no_grad():
                final = model.forward(s.image, prompts)
                entropy_after = confident_entropy_loss(final.logits, q).item()
            iou_after = compute_iou(final.logits.data >= 0.0, s.mask)

        records.append(
            {
                "volume_id": s.volume_id,
                "slice_index": s.slice_index,
                "iou_before": iou_before,
                "iou_after": iou_after,
                "entropy_before": entropy_before,
                "entropy_after": entropy_after,
            }
        )

        restore(model.registry, reference)
        if dump_bytes(model.registry) != reference:
            raise IntegrityError(
                f"weights after restoring sample (volume {s.volume_id}, slice "
                f"{s.slice_index}) differ from the checkpoint"
            )

    before = [r["iou_before"] for r in records]
    after = [r["iou_after"] for r in records]
    improved = [entropy_improved(r["entropy_before"], r["entropy_after"]) for r in records]
    fragment = {
        "kind": "ttda",
        "method": meta["method"],
        "seed": settings.seed,
        "split": settings.split,
        "count": len(records),
        "per_sample": records,
        "mean_iou_before": float(np.mean(before)),
        "mean_iou_after": float(np.mean(after)),
        "entropy_improved_fraction": float(np.mean(improved)) if adapt else 0.0,
        "checkpoint": str(checkpoint),
        "config": config_to_dict(cfg),
    }
    if report_path is not None:
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        Path(report_path).write_text(json.dumps(fragment, indent=2, sort_keys=True))
    return fragment


# -- ablation --------------------------------------------------------------------------------


ABLATION_SIZES = (512, 1024, 2048)


def _train_and_eval(cfg: RunConfig, data_root: Path, out_dir: Path) -> dict:
    fragment = train_supervised(cfg, data_root, out_dir)
    results = {}
    for domain in ("source", "target"):
        results[domain] = evaluate_checkpoint(
            fragment["checkpoint"],
            data_root,
            domain,
            "test",
            seed=cfg.train.seed,
            report_path=out_dir / f"fragment_eval_{domain}_test.json",
        )
    return {
        "source_iou": results["source"]["mean"],
        "target_iou": results["target"]["mean"],
        "trainable_params": fragment["trainable_params"],
    }


def run_ablation(
    cfg: RunConfig,
    data_root: str | Path,
    axis: str,
    out_dir: str | Path,
    seeds: Sequence[int] = METHOD_SEEDS,
    runner: Callable[[RunConfig, Path, Path], dict] | None = None,
) -> dict:
    """The size or placement matrix, each cell trained over the given seeds."""
    data_root = Path(data_root)
    out_dir = Path(out_dir)
    runner = runner or _train_and_eval
    if axis == "size":
        variants = [
            (f"size_{d}", replace(cfg, adapter=replace(cfg.adapter, prompt_dim=d, placement="decoder"),
                                  train=replace(cfg.train, method="sam_da_dec")))
            for d in ABLATION_SIZES
        ]
    elif axis == "placement":
        variants = [
            ("decoder", replace(cfg, train=replace(cfg.train, method="sam_da_dec"))),
            ("encoder", replace(cfg, train=replace(cfg.train, method="sam_da_enc"))),
        ]
    else:
        raise ValidationError(f"unknown ablation axis {axis!r}; expected 'size' or 'placement'")

    runs = []
    for name, variant in variants:
        for seed in seeds:
            run_cfg = replace(variant, train=replace(variant.train, seed=seed))
            outcome = runner(run_cfg, data_root, out_dir / f"{name}_seed{seed}")
            runs.append({"variant": name, "seed": seed, **outcome})

    summary = {}
    for name, _ in variants:
        rows = [r for r in runs if r["variant"] == name]
        summary[name] = {
            "source_iou_mean": float(np.mean([r["source_iou"] for r in rows])),
            "source_iou_std": float(np.std([r["source_iou"] for r in rows], ddof=1 if len(rows) > 1 else 0)),
            "target_iou_mean": float(np.mean([r["target_iou"] for r in rows])),
            "target_iou_std": float(np.std([r["target_iou"] for r in rows], ddof=1 if len(rows) > 1 else 0)),
            "trainable_params": rows[0]["trainable_params"],
        }
    report = {"kind": "ablation", "axis": axis, "runs": runs, "summary": summary}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"ablation_{axis}.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


# -- reporting -----------------------------------------------------------------------------------


def _check_mean(stored: float, values: Sequence[float], context: str) -> None:
    recomputed = float(np.mean(np.asarray(values, dtype=np.float64)))
    if abs(recomputed - stored) > 1e-9:
        raise IntegrityError(
            f"{context}: stored mean {stored!r} does not reproduce from per-image "
            f"scores (recomputed {recomputed!r})"
        )


def collect_fragments(run_dir: str | Path) -> list[dict]:
    run_dir = Path(run_dir)
    fragments = []
    for path in sorted(run_dir.rglob("*.json")):
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict) and doc.get("kind") in ("train", "eval", "ttda"):
            doc["_path"] = str(path)
            fragments.append(doc)
    if not fragments:
        raise ValidationError(f"no run fragments found under {run_dir}")
    return fragments


def aggregate_report(run_dir: str | Path) -> dict:
    """Cross-check every fragment and aggregate over seeds."""
    fragments = collect_fragments(run_dir)
    evals = [f for f in fragments if f["kind"] == "eval"]
    trains = [f for f in fragments if f["kind"] == "train"]
    ttdas = [f for f in fragments if f["kind"] == "ttda"]

    for f in evals:
        _check_mean(f["mean"], f["per_image"], f"eval fragment {f['_path']}")
    for f in ttdas:
        _check_mean(f["mean_iou_before"], [r["iou_before"] for r in f["per_sample"]],
                    f"ttda fragment {f['_path']} (before)")
        _check_mean(f["mean_iou_after"], [r["iou_after"] for r in f["per_sample"]],
                    f"ttda fragment {f['_path']} (after)")

    methods: dict[str, dict] = {}
    for f in trains:
        entry = methods.setdefault(f["method"], {"params": None, "cells": {}})
        entry["params"] = (f["trainable_params"], f["total_params"])

    grouped: dict[tuple[str, str, str], list[dict]] = {}
    for f in evals:
        grouped.setdefault((f["method"], f["domain"], f["split"]), []).append(f)
    for (method, domain, split), group in sorted(grouped.items()):
        group = sorted(group, key=lambda f: f["seed"])
        seed_means = [f["mean"] for f in group]
        cell = {
            "seeds": [f["seed"] for f in group],
            "seed_means": seed_means,
            "mean": float(np.mean(seed_means)),
            "std": float(np.std(seed_means, ddof=1 if len(seed_means) > 1 else 0)),
        }
        methods.setdefault(method, {"params": None, "cells": {}})["cells"][f"{domain}_{split}"] = cell

    # Paired tests on per-image scores pooled seed-major, methods pairwise.
    tests = []
    by_cell: dict[tuple[str, str], dict[str, list[float]]] = {}
    for (method, domain, split), group in grouped.items():
        group = sorted(group, key=lambda f: f["seed"])
        pooled: list[float] = []
        for f in group:
            pooled.extend(f["per_image"])
        by_cell.setdefault((domain, split), {})[method] = pooled
    for (domain, split), per_method in sorted(by_cell.items()):
        names = sorted(per_method)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                if len(per_method[a]) != len(per_method[b]) or len(per_method[a]) < 2:
                    continue
                result = paired_t_test(per_method[a], per_method[b])
                tests.append(
                    {
                        "domain": domain,
                        "split": split,
                        "methods": [a, b],
                        "t": result.statistic,
                        "p": result.p_value,
                        "dof": result.dof,
                        "degenerate": result.degenerate,
                    }
                )

    ttda_summary = [
        {
            "method": f["method"],
            "split": f["split"],
            "count": f["count"],
            "mean_iou_before": f["mean_iou_before"],
            "mean_iou_after": f["mean_iou_after"],
            "entropy_improved_fraction": f["entropy_improved_fraction"],
        }
        for f in ttdas
    ]
    return {
        "methods": methods,
        "t_tests": tests,
        "ttda": ttda_summary,
        "fragments": len(fragments),
    }


def render_table(report: dict) -> str:
    """Plain-text layout: methods down the rows, domain cells across."""
    cells = sorted({cell for m in report["methods"].values() for cell in m["cells"]})
    header = ["method", "params (train/total)"] + [f"{c} IoU" for c in cells]
    rows = [header]
    for method in sorted(report["methods"]):
        entry = report["methods"][method]
        params = "-"
        if entry["params"]:
            trainable, total = entry["params"]
            params = f"{trainable:,}/{total:,} ({100 * trainable / total:.1f}%)"
        row = [method, params]
        for cell in cells:
            stats = entry["cells"].get(cell)
            row.append("-" if stats is None else f"{stats['mean']:.4f} ± {stats['std']:.4f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))

    if report["ttda"]:
        lines.append("")
        lines.append("test-time adaptation:")
        for t in report["ttda"]:
            lines.append(
                f"  {t['method']} on {t['split']}: IoU {t['mean_iou_before']:.4f} -> "
                f"{t['mean_iou_after']:.4f} over {t['count']} samples "
                f"(entropy down on {100 * t['entropy_improved_fraction']:.0f}%)"
            )
    if report["t_tests"]:
        lines.append("")
        lines.append("paired t-tests (per-image IoU, pooled over seeds):")
        for t in report["t_tests"]:
            flag = " [degenerate]" if t["degenerate"] else ""
            lines.append(
                f"  {t['methods'][0]} vs {t['methods'][1]} on {t['domain']}_{t['split']}: "
                f"t={t['t']:+.3f}, p={t['p']:.4g}, dof={t['dof']}{flag}"
            )
    return "\n".join(lines)


def emit_report(run_dir: str | Path, fmt: str = "table") -> str:
    report = aggregate_report(run_dir)
    if fmt == "json":
        return json.dumps(report, indent=2, sort_keys=True)
    if fmt == "table":
        return render_table(report)
    raise ValidationError(f"unknown report format {fmt!r}; expected 'json' or 'table'")
