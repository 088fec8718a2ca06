"""Parameterized layers assembled by the surrogate network.

Every layer owns its weights as gradient-tracked tensors and yields them
through ``named_params`` as (name, tensor, is_complex) triples; complex
spectral kernels live as trailing real pairs, so the flag is what lets the
parameter accounting count them the way the literature does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import (
    Tensor,
    complexify,
    complex_mode_mix,
    concat,
    conv_depthwise3x3,
    conv_pointwise,
    dropout,
    droppath,
    fft_1d,
    gelu,
    ifft_1d,
    layer_norm,
    mode_pad,
    mode_truncate,
    narrow,
    relu,
    take_real,
)
from ..tensor.ops import add

DTYPES = {"real32": np.float32, "real64": np.float64}


@dataclass
class Context:
    """Per-call forward state: training flag and the noise generator."""

    training: bool = False
    rng: np.random.Generator | None = None


def _uniform(rng: np.random.Generator, shape, bound: float, dtype) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Pointwise:
    """1x1 convolution, the channel-mixing workhorse."""

    def __init__(self, rng, c_in: int, c_out: int, dtype, bias: bool = True):
        self.w = Tensor(_uniform(rng, (c_out, c_in), (1.0 / c_in) ** 0.5, dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x) -> Tensor:
        return conv_pointwise(x, self.w, self.b)

    def named_params(self, prefix: str):
        yield f"{prefix}.w", self.w, False
        if self.b is not None:
            yield f"{prefix}.b", self.b, False


class Depthwise3x3:
    """Per-channel 3x3 convolution, shape preserving."""

    def __init__(self, rng, c: int, dtype, bias: bool = True):
        self.w = Tensor(_uniform(rng, (c, 3, 3), (1.0 / 9.0) ** 0.5, dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(c, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x) -> Tensor:
        return conv_depthwise3x3(x, self.w, self.b)

    def named_params(self, prefix: str):
        yield f"{prefix}.w", self.w, False
        if self.b is not None:
            yield f"{prefix}.b", self.b, False


class Blueprint3x3:
    """Channel mixing then per-channel 3x3: a separable 3x3 convolution."""

    def __init__(self, rng, c_in: int, c_out: int, dtype):
        self.point = Pointwise(rng, c_in, c_out, dtype)
        self.depth = Depthwise3x3(rng, c_out, dtype)

    def __call__(self, x) -> Tensor:
        return self.depth(self.point(x))

    def named_params(self, prefix: str):
        yield from self.point.named_params(f"{prefix}.point")
        yield from self.depth.named_params(f"{prefix}.depth")


class LayerNorm:
    """Channel normalization at each position; batch independent."""

    def __init__(self, c: int, dtype):
        self.gamma = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)

    def named_params(self, prefix: str):
        yield f"{prefix}.gamma", self.gamma, False
        yield f"{prefix}.beta", self.beta, False


class SpectralConv1d:
    """Keep the lowest k Fourier modes along one axis and mix channels.

    The kernel holds one complex (c x c) matrix per kept mode; entries are
    uniform with scale 1/c so the spectral branch starts near the identity
    magnitude regardless of width.
    """

    def __init__(self, rng, c: int, k: int, axis: int, dtype):
        if axis not in (2, 3):
            raise ValueError("spectral axis must be a spatial axis (2 or 3)")
        self.k = k
        self.axis = axis
        self.r = Tensor(_uniform(rng, (k, c, c, 2), 1.0 / c, dtype),
                        requires_grad=True)

    def __call__(self, x) -> Tensor:
        length = x.shape[self.axis]
        if self.k > length:
            raise ValueError(
                f"{self.k} kept modes exceed axis length {length}"
            )
        z = complexify(x)
        z = fft_1d(z, self.axis)
        z = mode_truncate(z, self.k, self.axis)
        z = complex_mode_mix(z, self.r, mode_axis=self.axis)
        z = mode_pad(z, length, self.axis)
        z = ifft_1d(z, self.axis)
        return take_real(z)

    def named_params(self, prefix: str):
        yield f"{prefix}.r", self.r, True


class FFN:
    """Pointwise expand, depthwise 3x3, GELU, pointwise project.

    The optional switches reshape it into the ablation variants: a norm
    before the activation, no depthwise conv, or a second GELU after the
    projection.
    """

    def __init__(self, rng, c: int, s: int, dtype, *,
                 dwconv: bool = True, norm: bool = False,
                 extra_gelu: bool = False):
        self.expand = Pointwise(rng, c, s * c, dtype)
        self.norm = LayerNorm(s * c, dtype) if norm else None
        self.depth = Depthwise3x3(rng, s * c, dtype) if dwconv else None
        self.project = Pointwise(rng, s * c, c, dtype)
        self.extra_gelu = extra_gelu

    def __call__(self, x, ctx: Context) -> Tensor:
        y = self.expand(x)
        if self.norm is not None:
            y = self.norm(y)
        if self.depth is not None:
            y = self.depth(y)
        y = gelu(y)
        y = self.project(y)
        if self.extra_gelu:
            y = gelu(y)
        return y

    def named_params(self, prefix: str):
        yield from self.expand.named_params(f"{prefix}.expand")
        if self.norm is not None:
            yield from self.norm.named_params(f"{prefix}.norm")
        if self.depth is not None:
            yield from self.depth.named_params(f"{prefix}.depth")
        yield from self.project.named_params(f"{prefix}.project")


class CrossBlock:
    """One operator block: bisected spectral mixing, FFN, residual.

    The channel halves travel orthogonal axes: the first half is mixed
    along z (axis 3), the second along x (axis 2), then both are fused by
    the FFN.  The residual branch can be dropped whole per sample during
    training (stochastic depth).
    """

    def __init__(self, rng, c: int, k_z: int, k_x: int, s: int,
                 droppath_rate: float, dtype, *,
                 conv_path: bool = False, ffn_dwconv: bool = True,
                 ffn_norm: bool = False, extra_gelu: bool = False):
        if c % 2:
            raise ValueError("block channels must be even to bisect")
        half = c // 2
        self.half = half
        self.rate = float(droppath_rate)
        self.spec_z = SpectralConv1d(rng, half, k_z, axis=3, dtype=dtype)
        self.spec_x = SpectralConv1d(rng, half, k_x, axis=2, dtype=dtype)
        self.path = Depthwise3x3(rng, c, dtype) if conv_path else None
        self.ffn = FFN(rng, c, s, dtype, dwconv=ffn_dwconv, norm=ffn_norm,
                       extra_gelu=extra_gelu)

    def __call__(self, v, ctx: Context) -> Tensor:
        a = narrow(v, 1, 0, self.half)
        b = narrow(v, 1, self.half, self.half)
        k = concat([self.spec_z(a), self.spec_x(b)], axis=1)
        if self.path is not None:
            k = add(k, self.path(v))
        y = self.ffn(k, ctx)
        y = droppath(y, self.rate, ctx.rng, ctx.training)
        return add(y, v)

    def named_params(self, prefix: str):
        yield from self.spec_z.named_params(f"{prefix}.spec_z")
        yield from self.spec_x.named_params(f"{prefix}.spec_x")
        if self.path is not None:
            yield from self.path.named_params(f"{prefix}.path")
        yield from self.ffn.named_params(f"{prefix}.ffn")


class Stem:
    """Lift raw observation channels into the operator width."""

    def __init__(self, rng, c_in: int, schedule: tuple[int, ...], dtype,
                 kind: str = "bsconv"):
        self.kind = kind
        if kind == "lift":
            self.lift = Pointwise(rng, c_in, schedule[-1], dtype)
            self.stages = []
        elif kind == "bsconv":
            self.stages = []
            prev = c_in
            for c_out in schedule:
                self.stages.append(
                    (Blueprint3x3(rng, prev, c_out, dtype), LayerNorm(c_out, dtype))
                )
                prev = c_out
        else:
            raise ValueError(f"unknown stem kind {kind!r}")

    def __call__(self, x) -> Tensor:
        if self.kind == "lift":
            return self.lift(x)
        for conv, norm in self.stages:
            x = relu(norm(conv(x)))
        return x

    def named_params(self, prefix: str):
        if self.kind == "lift":
            yield from self.lift.named_params(f"{prefix}.lift")
            return
        for i, (conv, norm) in enumerate(self.stages):
            yield from conv.named_params(f"{prefix}.{i}.conv")
            yield from norm.named_params(f"{prefix}.{i}.norm")


class Head:
    """Project operator features to the predicted complex field pair."""

    def __init__(self, rng, c: int, hidden: int, p: float, dtype):
        self.p1 = Pointwise(rng, c, hidden, dtype)
        self.p2 = Pointwise(rng, hidden, 2, dtype)
        self.p = float(p)

    def __call__(self, x, ctx: Context) -> Tensor:
        y = gelu(self.p1(x))
        y = dropout(y, self.p, ctx.rng, ctx.training)
        return self.p2(y)

    def named_params(self, prefix: str):
        yield from self.p1.named_params(f"{prefix}.p1")
        yield from self.p2.named_params(f"{prefix}.p2")
