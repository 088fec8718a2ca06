"""Complex FFT kernels used by the differentiable spectral ops.

Transforms run over the trailing axis of a complex ndarray.  Power-of-two
lengths use an iterative radix-2 Cooley-Tukey butterfly; any other length
falls back to the Bluestein chirp-z algorithm built on top of the radix-2
core.  Both directions carry the unitary 1/sqrt(n) normalization, so the
transform preserves the l2 norm and its inverse equals its adjoint.

Sign convention matches numpy: the forward transform uses exp(-2*pi*j*k*l/n).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@lru_cache(maxsize=64)
def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n, dtype=np.int64)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    rev.setflags(write=False)
    return rev


@lru_cache(maxsize=256)
def _stage_twiddles(n: int, sign: int, dtype_name: str):
    """Per-stage twiddle tables for a length-n radix-2 pass."""
    dtype = np.dtype(dtype_name)
    tables = []
    m = 2
    while m <= n:
        k = np.arange(m // 2)
        w = np.exp(sign * 2j * np.pi * k / m).astype(dtype)
        w.setflags(write=False)
        tables.append(w)
        m *= 2
    return tables


def _fft_pow2(x: np.ndarray, sign: int) -> np.ndarray:
    """In-place-style radix-2 transform of the trailing axis (unnormalized)."""
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    out = np.ascontiguousarray(x[..., _bit_reverse_indices(n)])
    lead = out.shape[:-1]
    flat = out.reshape(-1, n)
    rows = flat.shape[0]
    # every stage needs rows * n/2 product entries; reuse one buffer
    scratch = np.empty(rows * (n // 2), dtype=out.dtype)
    for stage, w in enumerate(_stage_twiddles(n, sign, out.dtype.name)):
        m = 2 << stage
        half = m >> 1
        v = flat.reshape(rows, n // m, m)
        lo = v[:, :, :half]
        hi = v[:, :, half:]
        t = scratch.reshape(rows, n // m, half)
        np.multiply(hi, w, out=t)
        np.subtract(lo, t, out=hi)
        np.add(lo, t, out=lo)
    return out.reshape(lead + (n,))


@lru_cache(maxsize=128)
def _bluestein_tables(n: int, sign: int, dtype_name: str):
    """Chirp and padded-kernel spectrum for a length-n Bluestein transform."""
    dtype = np.dtype(dtype_name)
    k = np.arange(n, dtype=np.float64)
    chirp = np.exp(sign * 1j * np.pi * k * k / n).astype(dtype)
    m = 1
    while m < 2 * n - 1:
        m <<= 1
    kernel = np.zeros(m, dtype=dtype)
    kernel[:n] = np.conj(chirp)
    kernel[m - (n - 1):] = np.conj(chirp[1:][::-1])
    kernel_hat = _fft_pow2(kernel, -1)
    chirp.setflags(write=False)
    kernel_hat.setflags(write=False)
    return chirp, kernel_hat, m


def _fft_bluestein(x: np.ndarray, sign: int) -> np.ndarray:
    n = x.shape[-1]
    chirp, kernel_hat, m = _bluestein_tables(n, sign, x.dtype.name)
    a = np.zeros(x.shape[:-1] + (m,), dtype=x.dtype)
    a[..., :n] = x * chirp
    a_hat = _fft_pow2(a, -1)
    a_hat *= kernel_hat
    conv = _fft_pow2(a_hat, +1)
    conv /= m  # radix-2 core is unnormalized; undo the round trip
    return conv[..., :n] * chirp


def fft_last(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unitary DFT (or inverse DFT) along the trailing axis.

    Accepts complex64 or complex128 and preserves the dtype.
    """
    if not np.iscomplexobj(x):
        raise TypeError("fft_last expects a complex array")
    x = np.ascontiguousarray(x)
    n = x.shape[-1]
    sign = +1 if inverse else -1
    if _is_pow2(n):
        out = _fft_pow2(x, sign)
    else:
        out = _fft_bluestein(x, sign)
    out *= np.asarray(1.0 / np.sqrt(n), dtype=x.real.dtype)
    return out
