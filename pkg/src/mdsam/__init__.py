"""Salient object detection on a frozen ViT encoder with multi-scale adapters,
multi-level feature fusion and a detail-enhancement head."""
from .config import ConfigError, ModelConfig, TrainConfig
from .model import MDSAM, ModelOutput, SCALE_VARIANTS, VARIANTS, build_model, params_count, variant_config
from .losses import total_loss
from .training import (Checkpoint, TrainingDiverged, infer, load_checkpoint, run_ablation, save_checkpoint,
                       train)

__all__ = [
    "Checkpoint", "ConfigError", "MDSAM", "ModelConfig", "ModelOutput", "SCALE_VARIANTS", "TrainConfig",
    "TrainingDiverged", "VARIANTS", "build_model", "infer", "load_checkpoint", "params_count", "run_ablation",
    "save_checkpoint", "total_loss", "train", "variant_config",
]
__version__ = "0.1.0"
