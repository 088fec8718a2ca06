"""Minimal dense-array autodiff engine backing the surrogate model."""

from .engine import Tape, Tensor, active_tape
from .gradcheck import gradcheck
from .ops import (
    absolute,
    add,
    complex_mode_mix,
    complexify,
    concat,
    conv_blueprint3x3,
    conv_depthwise3x3,
    conv_pointwise,
    dropout,
    droppath,
    fft_1d,
    gelu,
    ifft_1d,
    layer_norm,
    mean_all,
    mode_pad,
    mode_truncate,
    mul,
    narrow,
    neg,
    relu,
    scale,
    sub,
    sum_all,
    sum_axes,
    take_real,
)

__all__ = [
    "Tape",
    "Tensor",
    "active_tape",
    "gradcheck",
    "absolute",
    "add",
    "complex_mode_mix",
    "complexify",
    "concat",
    "conv_blueprint3x3",
    "conv_depthwise3x3",
    "conv_pointwise",
    "dropout",
    "droppath",
    "fft_1d",
    "gelu",
    "ifft_1d",
    "layer_norm",
    "mean_all",
    "mode_pad",
    "mode_truncate",
    "mul",
    "narrow",
    "neg",
    "relu",
    "scale",
    "sub",
    "sum_all",
    "sum_axes",
    "take_real",
]
