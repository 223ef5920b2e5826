# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: batched radix-2 FFT, bilinear warping, row scatter.

Same contracts as :mod:`sscm.backend.pykernels`; selected at import when
the extension built. Loop-bound work lives here; anything that lowers to
a matrix product stays in numpy either way.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, floor, sin

cnp.import_array()

name = "compiled"

ctypedef fused floating:
    float
    double


def fft1d_batch(re, im, inverse):
    """Unnormalized radix-2 DFT along the last axis of (B, n) arrays."""
    dtype = re.dtype
    cdef double[:, ::1] xr = np.ascontiguousarray(re, dtype=np.float64)
    cdef double[:, ::1] xi = np.ascontiguousarray(im, dtype=np.float64)
    cdef Py_ssize_t b = xr.shape[0], n = xr.shape[1]
    out_re = np.empty((b, n), dtype=np.float64)
    out_im = np.empty((b, n), dtype=np.float64)
    cdef double[:, ::1] yr = out_re
    cdef double[:, ::1] yi = out_im

    cdef cnp.int64_t[::1] rev = _bitrev(n)
    cdef double sign = 1.0 if inverse else -1.0
    cdef double[::1] tc = np.empty(max(n // 2, 1), dtype=np.float64)
    cdef double[::1] ts = np.empty(max(n // 2, 1), dtype=np.float64)
    cdef Py_ssize_t k
    cdef double ang, base = 6.283185307179586476925287 / n
    for k in range(max(n // 2, 1)):
        ang = sign * base * k
        tc[k] = cos(ang)
        ts[k] = sin(ang)

    cdef Py_ssize_t row, i, m, half, step, start, j1, j2
    cdef double c, s, tr, ti
    for row in range(b):
        for i in range(n):
            yr[row, i] = xr[row, rev[i]]
            yi[row, i] = xi[row, rev[i]]
        m = 2
        while m <= n:
            half = m >> 1
            step = n // m
            start = 0
            while start < n:
                for k in range(half):
                    c = tc[k * step]
                    s = ts[k * step]
                    j1 = start + k
                    j2 = j1 + half
                    tr = yr[row, j2] * c - yi[row, j2] * s
                    ti = yr[row, j2] * s + yi[row, j2] * c
                    yr[row, j2] = yr[row, j1] - tr
                    yi[row, j2] = yi[row, j1] - ti
                    yr[row, j1] += tr
                    yi[row, j1] += ti
                start += m
            m <<= 1
    if dtype == np.float64:
        return out_re, out_im
    return out_re.astype(dtype), out_im.astype(dtype)


def _bitrev(Py_ssize_t n):
    cdef cnp.int64_t[::1] rev = np.zeros(n, dtype=np.int64)
    cdef Py_ssize_t i, j = 0, bit
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j |= bit
        rev[i] = j
    return np.asarray(rev)


def bilinear_warp_forward(feat, dx, dy):
    feat = np.ascontiguousarray(feat)
    dx = np.ascontiguousarray(dx)
    dy = np.ascontiguousarray(dy)
    out = np.empty_like(feat)
    if feat.dtype == np.float32:
        _warp_fwd_f32(feat, dx, dy, out)
    else:
        _warp_fwd_f64(feat, dx, dy, out)
    return out


def bilinear_warp_backward(feat, dx, dy, gout):
    feat = np.ascontiguousarray(feat)
    dx = np.ascontiguousarray(dx)
    dy = np.ascontiguousarray(dy)
    gout = np.ascontiguousarray(gout, dtype=feat.dtype)
    gfeat = np.zeros_like(feat)
    gdx = np.zeros_like(dx)
    gdy = np.zeros_like(dy)
    if feat.dtype == np.float32:
        _warp_bwd_f32(feat, dx, dy, gout, gfeat, gdx, gdy)
    else:
        _warp_bwd_f64(feat, dx, dy, gout, gfeat, gdx, gdy)
    return gfeat, gdx, gdy


cdef void _warp_fwd_impl(floating[:, :, ::1] feat, floating[:, ::1] dx,
                         floating[:, ::1] dy, floating[:, :, ::1] out) noexcept:
    cdef Py_ssize_t ch = feat.shape[0], h = feat.shape[1], w = feat.shape[2]
    cdef Py_ssize_t y, x, c, x0, y0
    cdef double sx, sy, fx, fy, w00, w01, w10, w11, v00, v01, v10, v11
    cdef bint i00, i01, i10, i11
    for y in range(h):
        for x in range(w):
            sx = x + <double> dx[y, x]
            sy = y + <double> dy[y, x]
            x0 = <Py_ssize_t> floor(sx)
            y0 = <Py_ssize_t> floor(sy)
            fx = sx - x0
            fy = sy - y0
            w00 = (1.0 - fy) * (1.0 - fx)
            w01 = (1.0 - fy) * fx
            w10 = fy * (1.0 - fx)
            w11 = fy * fx
            i00 = 0 <= y0 < h and 0 <= x0 < w
            i01 = 0 <= y0 < h and 0 <= x0 + 1 < w
            i10 = 0 <= y0 + 1 < h and 0 <= x0 < w
            i11 = 0 <= y0 + 1 < h and 0 <= x0 + 1 < w
            for c in range(ch):
                v00 = feat[c, y0, x0] if i00 else 0.0
                v01 = feat[c, y0, x0 + 1] if i01 else 0.0
                v10 = feat[c, y0 + 1, x0] if i10 else 0.0
                v11 = feat[c, y0 + 1, x0 + 1] if i11 else 0.0
                out[c, y, x] = <floating> (w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11)


cdef void _warp_bwd_impl(floating[:, :, ::1] feat, floating[:, ::1] dx,
                         floating[:, ::1] dy, floating[:, :, ::1] gout,
                         floating[:, :, ::1] gfeat, floating[:, ::1] gdx,
                         floating[:, ::1] gdy) noexcept:
    cdef Py_ssize_t ch = feat.shape[0], h = feat.shape[1], w = feat.shape[2]
    cdef Py_ssize_t y, x, c, x0, y0
    cdef double sx, sy, fx, fy, w00, w01, w10, w11
    cdef double v00, v01, v10, v11, g, ax, ay
    cdef bint i00, i01, i10, i11
    for y in range(h):
        for x in range(w):
            sx = x + <double> dx[y, x]
            sy = y + <double> dy[y, x]
            x0 = <Py_ssize_t> floor(sx)
            y0 = <Py_ssize_t> floor(sy)
            fx = sx - x0
            fy = sy - y0
            w00 = (1.0 - fy) * (1.0 - fx)
            w01 = (1.0 - fy) * fx
            w10 = fy * (1.0 - fx)
            w11 = fy * fx
            i00 = 0 <= y0 < h and 0 <= x0 < w
            i01 = 0 <= y0 < h and 0 <= x0 + 1 < w
            i10 = 0 <= y0 + 1 < h and 0 <= x0 < w
            i11 = 0 <= y0 + 1 < h and 0 <= x0 + 1 < w
            ax = 0.0
            ay = 0.0
            for c in range(ch):
                g = <double> gout[c, y, x]
                v00 = feat[c, y0, x0] if i00 else 0.0
                v01 = feat[c, y0, x0 + 1] if i01 else 0.0
                v10 = feat[c, y0 + 1, x0] if i10 else 0.0
                v11 = feat[c, y0 + 1, x0 + 1] if i11 else 0.0
                if i00:
                    gfeat[c, y0, x0] += <floating> (w00 * g)
                if i01:
                    gfeat[c, y0, x0 + 1] += <floating> (w01 * g)
                if i10:
                    gfeat[c, y0 + 1, x0] += <floating> (w10 * g)
                if i11:
                    gfeat[c, y0 + 1, x0 + 1] += <floating> (w11 * g)
                ax += g * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10))
                ay += g * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01))
            gdx[y, x] = <floating> ax
            gdy[y, x] = <floating> ay


def _warp_fwd_f32(float[:, :, ::1] feat, float[:, ::1] dx,
                  float[:, ::1] dy, float[:, :, ::1] out):
    _warp_fwd_impl(feat, dx, dy, out)


def _warp_fwd_f64(double[:, :, ::1] feat, double[:, ::1] dx,
                  double[:, ::1] dy, double[:, :, ::1] out):
    _warp_fwd_impl(feat, dx, dy, out)


def _warp_bwd_f32(float[:, :, ::1] feat, float[:, ::1] dx, float[:, ::1] dy,
                  float[:, :, ::1] gout, float[:, :, ::1] gfeat,
                  float[:, ::1] gdx, float[:, ::1] gdy):
    _warp_bwd_impl(feat, dx, dy, gout, gfeat, gdx, gdy)


def _warp_bwd_f64(double[:, :, ::1] feat, double[:, ::1] dx, double[:, ::1] dy,
                  double[:, :, ::1] gout, double[:, :, ::1] gfeat,
                  double[:, ::1] gdx, double[:, ::1] gdy):
    _warp_bwd_impl(feat, dx, dy, gout, gfeat, gdx, gdy)


def scatter_add_rows(values, idx, nrows):
    """out[idx[m], :] += values[m, :] into a zero (nrows, K) array."""
    values = np.ascontiguousarray(values)
    idx64 = np.ascontiguousarray(idx, dtype=np.int64)
    out = np.zeros((nrows, values.shape[1]), dtype=values.dtype)
    if values.dtype == np.float32:
        _scatter_f32(values, idx64, out)
    else:
        _scatter_f64(values, idx64, out)
    return out


cdef void _scatter_impl(floating[:, ::1] values, cnp.int64_t[::1] idx,
                        floating[:, ::1] out) noexcept:
    cdef Py_ssize_t m = values.shape[0], k = values.shape[1]
    cdef Py_ssize_t i, j, r
    for i in range(m):
        r = idx[i]
        for j in range(k):
            out[r, j] += values[i, j]


def _scatter_f32(float[:, ::1] values, cnp.int64_t[::1] idx, float[:, ::1] out):
    _scatter_impl(values, idx, out)


def _scatter_f64(double[:, ::1] values, cnp.int64_t[::1] idx, double[:, ::1] out):
    _scatter_impl(values, idx, out)
