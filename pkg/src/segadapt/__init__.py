"""Promptable toy segmentation with gated prompt adapters and a TTDA harness."""

from .adapter import (
    METHODS,
    AdapterConfig,
    LoraConfig,
    adapter_param_count,
    apply_freeze_policy,
    attach_decoder_adapter,
    attach_encoder_adapter,
    attach_lora,
    lora_param_count,
    trainable_fraction,
)
from .checkpoint import dump_bytes, load, load_bytes, restore, save
from .config import (
    DataSettings,
    RunConfig,
    TrainSettings,
    TTDASettings,
    config_from_dict,
    config_to_dict,
    default_config,
    load_config,
    save_config,
)
from .data import (
    DomainConfig,
    Sample,
    SplitSizes,
    default_pretrain_domain,
    default_source_domain,
    default_target_domain,
    generate_dataset,
    generate_sample,
    generate_volume,
    load_manifest,
    load_split,
    sample_from_bytes,
    sample_to_bytes,
)
from .engine import (
    EvalResult,
    emit_report,
    evaluate_checkpoint,
    evaluate_model,
    interior_prompt,
    load_model,
    run_ablation,
    run_ttda,
    train_supervised,
)
from .errors import (
    ContractError,
    DimensionError,
    FormatError,
    IntegrityError,
    ValidationError,
)
from .gradcheck import finite_diff_check
from .losses import (
    LossConfig,
    compute_iou,
    confident_entropy_loss,
    cross_entropy_loss,
    dice_loss,
    focal_loss,
    iou_match_loss,
    proximity_loss,
    slice_contrastive_loss,
    supervised_loss,
)
from .model import ModelConfig, PromptSet, SegmentationModel
from .params import AdamWState, Init, Parameter, ParameterRegistry, adamw_step, param_count
from .stats import TTestResult, paired_t_test
from .tensor import (
    Tensor,
    add_bias,
    backward,
    concat,
    gather_rows,
    layer_norm,
    matmul,
    no_grad,
    softmax,
)

__version__ = "0.1.0"

__all__ = [
    "AdamWState",
    "AdapterConfig",
    "ContractError",
    "DataSettings",
    "DimensionError",
    "DomainConfig",
    "EvalResult",
    "FormatError",
    "Init",
    "IntegrityError",
    "LoraConfig",
    "LossConfig",
    "METHODS",
    "ModelConfig",
    "Parameter",
    "ParameterRegistry",
    "PromptSet",
    "RunConfig",
    "Sample",
    "SegmentationModel",
    "SplitSizes",
    "TTDASettings",
    "TTestResult",
    "Tensor",
    "TrainSettings",
    "ValidationError",
    "adamw_step",
    "adapter_param_count",
    "add_bias",
    "apply_freeze_policy",
    "attach_decoder_adapter",
    "attach_encoder_adapter",
    "attach_lora",
    "backward",
    "compute_iou",
    "concat",
    "confident_entropy_loss",
    "config_from_dict",
    "config_to_dict",
    "cross_entropy_loss",
    "default_config",
    "default_pretrain_domain",
    "default_source_domain",
    "default_target_domain",
    "dice_loss",
    "dump_bytes",
    "emit_report",
    "evaluate_checkpoint",
    "evaluate_model",
    "finite_diff_check",
    "focal_loss",
    "gather_rows",
    "generate_dataset",
    "generate_sample",
    "generate_volume",
    "interior_prompt",
    "iou_match_loss",
    "layer_norm",
    "load",
    "load_bytes",
    "load_config",
    "load_manifest",
    "load_model",
    "load_split",
    "lora_param_count",
    "matmul",
    "no_grad",
    "paired_t_test",
    "param_count",
    "proximity_loss",
    "restore",
    "run_ablation",
    "run_ttda",
    "sample_from_bytes",
    "sample_to_bytes",
    "save",
    "save_config",
    "slice_contrastive_loss",
    "softmax",
    "supervised_loss",
    "train_supervised",
]
