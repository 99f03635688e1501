"""Two-phase, two-task vision transformer (facial expression + mask wearing)
on a small NumPy autodiff engine."""

from .config import ModelConfig, TrainingConfig, ViTConfig
from .model import CrossTaskModel, Phase1Output, Predictions, phase1_forward, phase2_forward, predict
from .complexity import count_parameters, estimate_flops

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "TrainingConfig", "ViTConfig", "CrossTaskModel", "Phase1Output",
    "Predictions", "phase1_forward", "phase2_forward", "predict",
    "count_parameters", "estimate_flops",
]
