"""Training, evaluation, and command-line layer over the solver and model."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import DEFAULTS, load_config
from .evaluate import (
    EvalReport,
    SweepResult,
    adapt,
    evaluate,
    evaluate_superposed,
    field_nmae,
    infer,
    spectrum_sweep,
    sweep_wavelengths,
)
from .mixup import apply_mixup, sample_mixup
from .optim import AdamW, cosine_lr
from .train import SampleBank, TrainConfig, TrainResult, save_curves, train

__all__ = [
    "AdamW",
    "DEFAULTS",
    "EvalReport",
    "SampleBank",
    "SweepResult",
    "TrainConfig",
    "TrainResult",
    "adapt",
    "apply_mixup",
    "cosine_lr",
    "evaluate",
    "evaluate_superposed",
    "field_nmae",
    "infer",
    "load_checkpoint",
    "load_config",
    "sample_mixup",
    "save_checkpoint",
    "save_curves",
    "spectrum_sweep",
    "sweep_wavelengths",
    "train",
]
