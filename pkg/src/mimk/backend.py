"""Kernel backend selection: compiled core when available, numpy otherwise.

The hot inner loops that numpy has no single primitive for (direct small-kernel
convolution, radix-2 FFT butterflies, exact elementwise erf) live in the
optional Cython extension ``mimk._ckernels``.  This module provides numpy
implementations of the same functions and picks one set at import time:

* ``MIMK_BACKEND=numpy``  force the numpy fallback
* ``MIMK_BACKEND=cython`` require the compiled core (ImportError if missing)
* unset                   prefer the compiled core, silently fall back

Everything BLAS already covers (matmul and friends) stays on numpy in both
backends.  ``benchmarks/bench_backends.py`` compares the two.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .errors import ConfigError

_erf_ufunc = np.frompyfunc(math.erf, 1, 1)


def _numpy_erf(x: np.ndarray) -> np.ndarray:
    return _erf_ufunc(x).astype(np.float64)


def _numpy_conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    cout, cin, k, _ = w.shape
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # [Cin, Ho, Wo, k, k]
    return np.einsum("cijpq,ocpq->oij", windows, w, optimize=True)


def _numpy_conv2d_backward_x(g: np.ndarray, w: np.ndarray, stride: int,
                             H: int, W: int) -> np.ndarray:
    cout, cin, k, _ = w.shape
    _, Ho, Wo = g.shape
    dx = np.zeros((cin, H, W), dtype=np.float64)
    # scatter-add per kernel offset; k is small so the python loop is cheap
    contrib = np.einsum("oij,ocpq->cijpq", g, w, optimize=True)
    for p in range(k):
        for q in range(k):
            dx[:, p:p + Ho * stride:stride, q:q + Wo * stride:stride] += contrib[:, :, :, p, q]
    return dx


def _numpy_conv2d_backward_w(g: np.ndarray, x: np.ndarray, stride: int, k: int) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]
    return np.einsum("oij,cijpq->ocpq", g, windows, optimize=True)


def _numpy_fft_rows(z: np.ndarray, rev_idx: np.ndarray, twiddles: np.ndarray) -> None:
    """Radix-2 DIT butterflies over the last axis, in place, vectorized
    across rows.  Same plan layout as the compiled kernel.

    The twiddle product is spelled out on real/imag views: numpy's complex
    multiply may fuse multiply-adds (SIMD FMA), which would round differently
    from the compiled kernel built with contraction disabled.  Separate
    multiply and subtract/add ufunc calls round exactly like the C code.
    """
    rows, n = z.shape
    z[:] = z[:, rev_idx]
    L = 2
    while L <= n:
        m = L // 2
        w = twiddles[m - 1:2 * m - 1]
        wr, wi = w.real, w.imag
        v = z.reshape(rows, n // L, L)
        hi = v[:, :, m:]
        a, b = hi.real, hi.imag
        t = (a * wr - b * wi) + 1j * (a * wi + b * wr)
        u = v[:, :, :m].copy()
        v[:, :, :m] = u + t
        v[:, :, m:] = u - t
        L *= 2


class _NumpyKernels:
    name = "numpy"
    erf = staticmethod(_numpy_erf)
    conv2d_forward = staticmethod(_numpy_conv2d_forward)
    conv2d_backward_x = staticmethod(_numpy_conv2d_backward_x)
    conv2d_backward_w = staticmethod(_numpy_conv2d_backward_w)
    fft_rows = staticmethod(_numpy_fft_rows)


class _CythonKernels:
    name = "cython"

    def __init__(self, mod):
        self.erf = mod.erf
        self._mod = mod

    def conv2d_forward(self, x, w, stride):
        return self._mod.conv2d_forward(
            np.ascontiguousarray(x), np.ascontiguousarray(w), int(stride))

    def conv2d_backward_x(self, g, w, stride, H, W):
        return self._mod.conv2d_backward_x(
            np.ascontiguousarray(g), np.ascontiguousarray(w), int(stride), H, W)

    def conv2d_backward_w(self, g, x, stride, k):
        return self._mod.conv2d_backward_w(
            np.ascontiguousarray(g), np.ascontiguousarray(x), int(stride), k)

    def fft_rows(self, z, rev_idx, twiddles):
        self._mod.fft_rows(z, rev_idx, twiddles)


def _select():
    choice = os.environ.get("MIMK_BACKEND", "").strip().lower()
    if choice and choice not in ("numpy", "python", "cython", "c"):
        raise ConfigError(
            f"MIMK_BACKEND={choice!r} not recognized "
            "(use numpy, python, cython, or c)")
    if choice in ("numpy", "python"):
        return _NumpyKernels()
    try:
        from . import _ckernels
    except ImportError:
        if choice in ("cython", "c"):
            raise
        return _NumpyKernels()
    return _CythonKernels(_ckernels)


kernels = _select()


def available_backends():
    """All kernel sets importable in this environment (for tests/benchmarks)."""
    out = [_NumpyKernels()]
    try:
        from . import _ckernels
    except ImportError:
        return out
    return out + [_CythonKernels(_ckernels)]
