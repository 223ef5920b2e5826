"""Pure-numpy implementations of the hot kernels.

Drop-in fallback for the compiled extension in ``_kernels.pyx``; the
``sscm.backend`` package selects one of the two at import time. Only the
loop-bound kernels live here -- convolution and attention matmuls route
through BLAS either way and are implemented once in ``sscm.ops``.
"""

from __future__ import annotations

import numpy as np

name = "python"

# ------------------------------------------------------------------ FFT --

_BITREV: dict[int, np.ndarray] = {}
_TWIDDLE: dict[tuple[int, float], np.ndarray] = {}


def _bitrev_indices(n: int) -> np.ndarray:
    idx = _BITREV.get(n)
    if idx is None:
        bits = n.bit_length() - 1
        idx = np.zeros(n, dtype=np.int64)
        for i in range(n):
            r, x = 0, i
            for _ in range(bits):
                r = (r << 1) | (x & 1)
                x >>= 1
            idx[i] = r
        _BITREV[n] = idx
    return idx


def _twiddles(size: int, sign: float) -> np.ndarray:
    key = (size, sign)
    tw = _TWIDDLE.get(key)
    if tw is None:
        k = np.arange(size // 2)
        tw = np.exp(sign * 2j * np.pi * k / size)
        _TWIDDLE[key] = tw
    return tw


def fft1d_batch(re: np.ndarray, im: np.ndarray, inverse: bool):
    """Unnormalized radix-2 FFT along the last axis of (B, n) arrays.

    n must be a power of two (validated by the caller). The inverse flag
    only flips the twiddle sign; no 1/n scaling is applied here.
    """
    n = re.shape[-1]
    if n == 1:
        return re.copy(), im.copy()
    ctype = np.complex64 if re.dtype == np.float32 else np.complex128
    z = (re + 1j * im).astype(ctype, copy=False)
    z = z[:, _bitrev_indices(n)]
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        tw = _twiddles(size, sign).astype(ctype, copy=False)
        zv = z.reshape(-1, n // size, size)
        a = zv[:, :, :half]
        b = zv[:, :, half:] * tw
        z = np.concatenate((a + b, a - b), axis=2).reshape(-1, n)
        size *= 2
    return np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag)


# --------------------------------------------------------- bilinear warp --

_GRID: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _grid(h: int, w: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    key = (h, w, np.dtype(dtype).str)
    g = _GRID.get(key)
    if g is None:
        gy, gx = np.meshgrid(
            np.arange(h, dtype=dtype), np.arange(w, dtype=dtype), indexing="ij"
        )
        g = (gy, gx)
        _GRID[key] = g
    return g


def _taps(feat: np.ndarray, dx: np.ndarray, dy: np.ndarray):
    """Sample positions, fractional weights, and the four zero-padded taps."""
    c, h, w = feat.shape
    gy, gx = _grid(h, w, feat.dtype)
    xs = gx + dx
    ys = gy + dy
    x0f = np.floor(xs)
    y0f = np.floor(ys)
    fx = xs - x0f
    fy = ys - y0f
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)
    feat2 = feat.reshape(c, h * w)
    vals = []
    idxs = []
    for ddy, ddx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yt = y0 + ddy
        xt = x0 + ddx
        ok = (yt >= 0) & (yt < h) & (xt >= 0) & (xt < w)
        idx = np.clip(yt, 0, h - 1) * w + np.clip(xt, 0, w - 1)
        v = feat2[:, idx.ravel()].reshape(c, h, w) * ok
        vals.append(v)
        idxs.append((idx, ok))
    return fx, fy, vals, idxs


def bilinear_warp_forward(feat: np.ndarray, dx: np.ndarray, dy: np.ndarray):
    """Sample feat at (x+dx, y+dy) with bilinear weights; outside reads 0."""
    fx, fy, (v00, v01, v10, v11), _ = _taps(feat, dx, dy)
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11)


def bilinear_warp_backward(feat, dx, dy, gout):
    c, h, w = feat.shape
    fx, fy, (v00, v01, v10, v11), idxs = _taps(feat, dx, dy)
    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    gfeat = np.zeros(c * h * w, dtype=np.float64)
    coff = np.arange(c, dtype=np.int64)[:, None] * (h * w)
    for wt, (idx, ok) in zip((w00, w01, w10, w11), idxs):
        contrib = gout * (wt * ok)
        big = (coff + idx.ravel()[None, :]).ravel()
        gfeat += np.bincount(
            big, weights=contrib.reshape(c, -1).ravel().astype(np.float64),
            minlength=c * h * w,
        )
    gdx = (gout * ((1 - fy) * (v01 - v00) + fy * (v11 - v10))).sum(axis=0)
    gdy = (gout * ((1 - fx) * (v10 - v00) + fx * (v11 - v01))).sum(axis=0)
    return (
        gfeat.reshape(c, h, w).astype(feat.dtype),
        gdx.astype(feat.dtype, copy=False),
        gdy.astype(feat.dtype, copy=False),
    )


# ------------------------------------------------------------ scatter-add --


def scatter_add_rows(values: np.ndarray, idx: np.ndarray, nrows: int):
    """out[idx[i]] += values[i] for (M, K) values; returns (nrows, K)."""
    m, k = values.shape
    big = (idx.astype(np.int64)[:, None] * k + np.arange(k, dtype=np.int64)).ravel()
    acc = np.bincount(
        big, weights=np.ascontiguousarray(values).ravel().astype(np.float64),
        minlength=nrows * k,
    )
    return acc.reshape(nrows, k).astype(values.dtype)
