"""Differentiable operations over `Tensor`.

Exactly the op set the surrogate model needs: elementwise arithmetic,
activations, channel normalization, pointwise / depthwise / blueprint
convolutions, dropout and droppath regularizers, reductions, and the spectral
quartet (fft_1d, mode_truncate / mode_pad, complex_mode_mix, ifft_1d).

Complex data is stored as paired real channels: a trailing axis of size 2
holding (re, im).  The spectral ops operate on such pairs; `complexify` and
`take_real` convert at the boundaries.

Every op wires an exact vector-Jacobian product; finite-difference checks in
the test suite are the ground truth for all of them.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .engine import Tensor, result
from .fft import fft_last

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return result(a.data + b.data, (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return result(a.data - b.data, (a, b), fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def fn(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return result(ad * bd, (a, b), fn)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def fn(g):
        return (-g,)

    return result(-a.data, (a,), fn)


def scale(a, c: float) -> Tensor:
    """Multiply by a python constant (not differentiated through)."""
    a = _as_tensor(a)
    c = float(c)

    def fn(g):
        return (g * c,)

    return result(a.data * c, (a,), fn)


# ---------------------------------------------------------------------------
# activations and normalization
# ---------------------------------------------------------------------------

def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def fn(g):
        return (g * mask,)

    return result(np.where(mask, a.data, 0), (a,), fn)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def fn(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (cdf + x * pdf),)

    return result(x * cdf, (a,), fn)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the channel axis (axis 1) at each position, then apply
    the per-channel affine (gamma, beta).  Batch-independent by construction."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    xd = x.data
    c = xd.shape[1]
    bshape = (1, c) + (1,) * (xd.ndim - 2)
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gb = gamma.data.reshape(bshape)

    def fn(g):
        dxhat = g * gb
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        reduce_axes = (0,) + tuple(range(2, xd.ndim))
        dgamma = (g * xhat).sum(axis=reduce_axes)
        dbeta = g.sum(axis=reduce_axes)
        return dx, dgamma, dbeta

    out = gb * xhat + beta.data.reshape(bshape)
    return result(out, (x, gamma, beta), fn)


# ---------------------------------------------------------------------------
# regularizers
# ---------------------------------------------------------------------------

def dropout(x, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    x = _as_tensor(x)
    if not training or p <= 0.0:
        return x
    keep = 1.0 - p
    mask = (rng.random(x.data.shape) < keep).astype(x.data.dtype) / keep

    def fn(g):
        return (g * mask,)

    return result(x.data * mask, (x,), fn)


def droppath(x, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Drop the whole residual branch per sample (stochastic depth).

    In eval mode this is the identity, with an identity Jacobian.
    """
    x = _as_tensor(x)
    if not training or p <= 0.0:
        return x
    keep = 1.0 - p
    b = x.data.shape[0]
    mshape = (b,) + (1,) * (x.data.ndim - 1)
    mask = (rng.random(mshape) < keep).astype(x.data.dtype) / keep

    def fn(g):
        return (g * mask,)

    return result(x.data * mask, (x,), fn)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------

def conv_pointwise(x, w, b=None) -> Tensor:
    """1x1 convolution: x (B, Ci, H, W), w (Co, Ci), optional bias (Co,)."""
    x, w = _as_tensor(x), _as_tensor(w)
    xd, wd = x.data, w.data
    bsz, ci, h, wd_ = xd.shape
    co = wd.shape[0]
    xr = xd.reshape(bsz, ci, h * wd_)
    y = np.matmul(wd, xr).reshape(bsz, co, h, wd_)
    parents: tuple
    if b is not None:
        b = _as_tensor(b)
        y = y + b.data.reshape(1, co, 1, 1)
        parents = (x, w, b)
    else:
        parents = (x, w)

    def fn(g):
        gr = g.reshape(bsz, co, h * wd_)
        dx = np.matmul(wd.T, gr).reshape(xd.shape)
        gt = g.transpose(1, 0, 2, 3).reshape(co, -1)
        xt = xd.transpose(1, 0, 2, 3).reshape(ci, -1)
        dw = gt @ xt.T
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return result(y, parents, fn)


def conv_depthwise3x3(x, w, b=None) -> Tensor:
    """Per-channel 3x3 convolution, zero padded to the same shape.

    x (B, C, H, W), w (C, 3, 3), optional bias (C,).
    """
    x, w = _as_tensor(x), _as_tensor(w)
    xd, wd = x.data, w.data
    bsz, c, h, width = xd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    y = np.zeros_like(xd)
    for u in range(3):
        for v in range(3):
            y += wd[:, u, v][None, :, None, None] * xp[:, :, u:u + h, v:v + width]
    parents: tuple
    if b is not None:
        b = _as_tensor(b)
        y = y + b.data.reshape(1, c, 1, 1)
        parents = (x, w, b)
    else:
        parents = (x, w)

    def fn(g):
        gp = np.pad(g, ((0, 0), (0, 0), (1, 1), (1, 1)))
        dx = np.zeros_like(xd)
        dw = np.empty_like(wd)
        for u in range(3):
            for v in range(3):
                dx += wd[:, u, v][None, :, None, None] * gp[:, :, 2 - u:2 - u + h, 2 - v:2 - v + width]
                dw[:, u, v] = np.einsum(
                    "bchw,bchw->c", g, xp[:, :, u:u + h, v:v + width]
                )
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return result(y, parents, fn)


def conv_blueprint3x3(x, w_point, b_point, w_depth, b_depth) -> Tensor:
    """Blueprint separable conv: channel mixing (1x1) then per-channel 3x3."""
    return conv_depthwise3x3(conv_pointwise(x, w_point, b_point), w_depth, b_depth)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum_axes(x, axes, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(a % x.data.ndim for a in axes)
    shape = x.data.shape

    def fn(g):
        if not keepdims:
            kshape = tuple(1 if i in axes else s for i, s in enumerate(shape))
            g = g.reshape(kshape)
        return (np.broadcast_to(g, shape).copy(),)

    return result(x.data.sum(axis=axes, keepdims=keepdims), (x,), fn)


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    shape = x.data.shape

    def fn(g):
        return (np.broadcast_to(g, shape) * np.ones(1, dtype=x.data.dtype),)

    return result(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), fn)


def mean_all(x) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    shape = x.data.shape

    def fn(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return result(np.asarray(x.data.mean(), dtype=x.data.dtype), (x,), fn)


def absolute(x) -> Tensor:
    x = _as_tensor(x)
    s = np.sign(x.data)

    def fn(g):
        return (g * s,)

    return result(np.abs(x.data), (x,), fn)


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    datas = [t.data for t in tensors]
    axis = axis % datas[0].ndim
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def fn(g):
        slices = []
        for i in range(len(datas)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offsets[i], offsets[i + 1])
            slices.append(g[tuple(idx)])
        return tuple(slices)

    return result(np.concatenate(datas, axis=axis), tuple(tensors), fn)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries from `start` along `axis`."""
    x = _as_tensor(x)
    axis = axis % x.data.ndim
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    shape = x.data.shape

    def fn(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return result(x.data[idx].copy(), (x,), fn)


# ---------------------------------------------------------------------------
# complex-pair helpers and spectral ops
# ---------------------------------------------------------------------------

def complexify(x) -> Tensor:
    """Real (...,) -> complex pair (..., 2) with zero imaginary part."""
    x = _as_tensor(x)

    def fn(g):
        return (np.ascontiguousarray(g[..., 0]),)

    data = np.stack([x.data, np.zeros_like(x.data)], axis=-1)
    return result(data, (x,), fn)


def take_real(x) -> Tensor:
    """Complex pair (..., 2) -> real part (...,)."""
    x = _as_tensor(x)
    _check_pair(x.data)

    def fn(g):
        return (np.stack([g, np.zeros_like(g)], axis=-1),)

    return result(np.ascontiguousarray(x.data[..., 0]), (x,), fn)


def _check_pair(d: np.ndarray) -> None:
    if d.shape[-1] != 2:
        raise ValueError("expected a complex pair tensor with trailing axis 2")


def _pair_to_complex(d: np.ndarray) -> np.ndarray:
    out = np.empty(d.shape[:-1], dtype=np.complex64 if d.dtype == np.float32 else np.complex128)
    out.real = d[..., 0]
    out.imag = d[..., 1]
    return out


def _complex_to_pair(c: np.ndarray) -> np.ndarray:
    return np.stack([c.real, c.imag], axis=-1)


def _fft_pair(d: np.ndarray, axis: int, inverse: bool) -> np.ndarray:
    c = _pair_to_complex(d)
    cm = np.moveaxis(c, axis, -1)
    y = fft_last(cm, inverse=inverse)
    return _complex_to_pair(np.moveaxis(y, -1, axis))


def fft_1d(x, axis: int, inverse: bool = False) -> Tensor:
    """Unitary DFT along `axis` of a complex-pair tensor.

    The transform is norm preserving; its vector-Jacobian product is the
    opposite-direction transform (unitarity makes the adjoint the inverse).
    """
    x = _as_tensor(x)
    _check_pair(x.data)
    axis = axis % x.data.ndim
    if axis == x.data.ndim - 1:
        raise ValueError("cannot transform the complex pair axis")

    def fn(g):
        return (_fft_pair(g, axis, not inverse),)

    return result(_fft_pair(x.data, axis, inverse), (x,), fn)


def ifft_1d(x, axis: int) -> Tensor:
    return fft_1d(x, axis, inverse=True)


def mode_truncate(x, k: int, axis: int) -> Tensor:
    """Keep the lowest k frequency bins along `axis`, dropping the rest."""
    x = _as_tensor(x)
    _check_pair(x.data)
    axis = axis % x.data.ndim
    n = x.data.shape[axis]
    if not 0 < k <= n:
        raise ValueError(f"kept modes k={k} out of range for axis length {n}")
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(0, k)
    idx = tuple(idx)
    shape = x.data.shape

    def fn(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return result(np.ascontiguousarray(x.data[idx]), (x,), fn)


def mode_pad(x, n: int, axis: int) -> Tensor:
    """Zero-pad the frequency axis back to length n (inverse of truncation)."""
    x = _as_tensor(x)
    _check_pair(x.data)
    axis = axis % x.data.ndim
    k = x.data.shape[axis]
    if n < k:
        raise ValueError(f"pad target {n} shorter than current length {k}")
    pad = [(0, 0)] * x.data.ndim
    pad[axis] = (0, n - k)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(0, k)
    idx = tuple(idx)

    def fn(g):
        return (np.ascontiguousarray(g[idx]),)

    return result(np.pad(x.data, pad), (x,), fn)


_MIX_SUBSCRIPTS = {
    2: ("koi,bikn->bokn", "koi,bokn->bikn", "bokn,bikn->koi"),
    3: ("koi,bimk->bomk", "koi,bomk->bimk", "bomk,bimk->koi"),
}


def complex_mode_mix(x, r, mode_axis: int) -> Tensor:
    """Per-mode complex channel mixing.

    x: complex pair (B, Ci, D2, D3, 2) with the kept-mode axis at `mode_axis`
    (2 or 3); r: complex pair (K, Co, Ci, 2) with K matching the mode axis
    length.  For every mode index k the Ci channels are mixed through the
    complex matrix r[k].
    """
    x, r = _as_tensor(x), _as_tensor(r)
    _check_pair(x.data)
    _check_pair(r.data)
    if mode_axis not in _MIX_SUBSCRIPTS:
        raise ValueError("mode_axis must be 2 or 3")
    if x.data.shape[mode_axis] != r.data.shape[0]:
        raise ValueError("kernel mode count does not match the mode axis")
    fwd, bwd_x, bwd_r = _MIX_SUBSCRIPTS[mode_axis]
    xr, xi = x.data[..., 0], x.data[..., 1]
    rr, ri = r.data[..., 0], r.data[..., 1]

    yr = np.einsum(fwd, rr, xr, optimize=True) - np.einsum(fwd, ri, xi, optimize=True)
    yi = np.einsum(fwd, rr, xi, optimize=True) + np.einsum(fwd, ri, xr, optimize=True)

    def fn(g):
        gr, gi = g[..., 0], g[..., 1]
        dxr = np.einsum(bwd_x, rr, gr, optimize=True) + np.einsum(bwd_x, ri, gi, optimize=True)
        dxi = np.einsum(bwd_x, rr, gi, optimize=True) - np.einsum(bwd_x, ri, gr, optimize=True)
        drr = np.einsum(bwd_r, gr, xr, optimize=True) + np.einsum(bwd_r, gi, xi, optimize=True)
        dri = np.einsum(bwd_r, gi, xr, optimize=True) - np.einsum(bwd_r, gr, xi, optimize=True)
        return np.stack([dxr, dxi], axis=-1), np.stack([drr, dri], axis=-1)

    return result(np.stack([yr, yi], axis=-1), (x, r), fn)


# convenience operators on Tensor
Tensor.__add__ = add
Tensor.__radd__ = add
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = mul
Tensor.__rmul__ = mul
Tensor.__neg__ = neg
