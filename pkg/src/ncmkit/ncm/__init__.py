"""Neural confidence classifier: residual FFN, learnable heads, focal loss."""

from ncmkit.ncm.io import load_model, model_from_dict, model_to_dict, save_model
from ncmkit.ncm.loss import focal_loss_from_logits, weighted_focal_loss
from ncmkit.ncm.model import (
    Batch,
    FusionHead,
    NCMModel,
    ResidualFFN,
    TempHead,
    adaptive_temperature,
    compute_gradients,
    fused_lambda,
    init_model,
    ncm_forward,
    predict,
)
from ncmkit.ncm.train import TrainConfig, train

__all__ = [
    "Batch",
    "FusionHead",
    "NCMModel",
    "ResidualFFN",
    "TempHead",
    "TrainConfig",
    "adaptive_temperature",
    "compute_gradients",
    "focal_loss_from_logits",
    "fused_lambda",
    "init_model",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "ncm_forward",
    "predict",
    "save_model",
    "train",
    "weighted_focal_loss",
]
