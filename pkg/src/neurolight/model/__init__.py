"""Cross-shaped Fourier-operator surrogate for frequency-domain fields."""

from .layers import Context, CrossBlock, FFN, Head, SpectralConv1d, Stem
from .loss import nmae
from .network import (
    ModelConfig,
    NeurOLightModel,
    block_core_formula,
    count_params,
    param_breakdown,
)

__all__ = [
    "Context",
    "CrossBlock",
    "FFN",
    "Head",
    "ModelConfig",
    "NeurOLightModel",
    "SpectralConv1d",
    "Stem",
    "block_core_formula",
    "count_params",
    "nmae",
    "param_breakdown",
]
