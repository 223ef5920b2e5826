"""Differentiable primitive operations on :class:`~sscm.tensor.Tensor`.

Every public function runs a numpy forward pass and, when a tape is
active and some input requires grad, registers a backward closure. Binary
elementwise ops demand identical shapes (a size-1 tensor counts as a
scalar); there is no implicit broadcasting beyond that. Constants passed
to ``add_const`` / ``mul_const`` are plain numpy arrays that must
broadcast into the tensor's shape, never the other way around.

Convolution lowers to im2col plus a BLAS matmul; its input gradient is
computed as a full correlation of the (stride-dilated) upstream gradient
with the transposed, spatially flipped kernel, which avoids a scatter.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import backend
from .errors import ContractError, ShapeError
from .tensor import Tensor, active_tape, debug_checks_enabled

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _emit(name, inputs, out_arrays, backward_fn):
    """Wrap forward results and register the backward rule if needed."""
    if debug_checks_enabled():
        for a in out_arrays:
            if not np.all(np.isfinite(a)):
                raise ContractError(f"non-finite output from op '{name}'")
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    outs = tuple(Tensor._wrap(a, requires_grad=needs) for a in out_arrays)
    if needs:
        tape.record(name, inputs, outs, backward_fn)
    return outs


def _check_binary(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Collapse a gradient onto a size-1 operand's shape."""
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape).astype(g.dtype, copy=False)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_binary("add", a, b)

    def bw(gs):
        (g,) = gs
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _emit("add", (a, b), (a.data + b.data,), bw)[0]


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_binary("sub", a, b)

    def bw(gs):
        (g,) = gs
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _emit("sub", (a, b), (a.data - b.data,), bw)[0]


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_binary("mul", a, b)
    ad, bd = a.data, b.data

    def bw(gs):
        (g,) = gs
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)

    return _emit("mul", (a, b), (ad * bd,), bw)[0]


def neg(a: Tensor) -> Tensor:
    def bw(gs):
        return (-gs[0],)

    return _emit("neg", (a,), (-a.data,), bw)[0]


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar."""
    s = float(s)

    def bw(gs):
        return (gs[0] * s,)

    return _emit("scale", (a,), (a.data * s,), bw)[0]


def add_const(a: Tensor, c) -> Tensor:
    """Add a constant array; c must broadcast into a's shape."""
    c = np.asarray(c, dtype=a.dtype)
    out = a.data + c
    if out.shape != a.shape:
        raise ShapeError(f"add_const: constant {c.shape} widens {a.shape}")

    def bw(gs):
        return (gs[0],)

    return _emit("add_const", (a,), (out,), bw)[0]


def mul_const(a: Tensor, c) -> Tensor:
    """Multiply by a constant array; c must broadcast into a's shape."""
    c = np.asarray(c, dtype=a.dtype)
    out = a.data * c
    if out.shape != a.shape:
        raise ShapeError(f"mul_const: constant {c.shape} widens {a.shape}")

    def bw(gs):
        return (gs[0] * c,)

    return _emit("mul_const", (a,), (out,), bw)[0]


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(gs):
        return (gs[0] * mask,)

    return _emit("relu", (a,), (np.where(mask, a.data, 0),), bw)[0]


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh form: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715 x^3)))."""
    x = a.data
    x2 = x * x
    u = x2 * _GELU_A
    u += 1.0
    u *= x
    u *= _GELU_C
    t = np.tanh(u, out=u)
    out = t + 1.0
    out *= x
    out *= 0.5

    def bw(gs):
        du = x2 * (3.0 * _GELU_A)
        du += 1.0
        du *= _GELU_C
        du *= 1.0 - t * t
        du *= x
        du += 1.0 + t
        du *= 0.5
        du *= gs[0]
        return (du,)

    return _emit("gelu", (a,), (out,), bw)[0]


def absolute(a: Tensor) -> Tensor:
    """Elementwise |x|; subgradient at 0 is 0."""
    s = np.sign(a.data)

    def bw(gs):
        return (gs[0] * s,)

    return _emit("absolute", (a,), (np.abs(a.data),), bw)[0]


def sum_all(a: Tensor) -> Tensor:
    shape, dt = a.shape, a.dtype

    def bw(gs):
        return (np.full(shape, gs[0].reshape(()), dtype=dt),)

    return _emit("sum_all", (a,), (np.sum(a.data).reshape(()),), bw)[0]


def mean_all(a: Tensor) -> Tensor:
    shape, dt = a.shape, a.dtype
    n = a.size

    def bw(gs):
        return (np.full(shape, gs[0].reshape(()) / n, dtype=dt),)

    return _emit("mean_all", (a,), (np.mean(a.data).reshape(()),), bw)[0]


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = a.shape

    def bw(gs):
        return (gs[0].reshape(old),)

    return _emit("reshape", (a,), (a.data.reshape(shape),), bw)[0]


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(int(x) for x in axes)
    inv = tuple(np.argsort(axes))

    def bw(gs):
        return (np.ascontiguousarray(gs[0].transpose(inv)),)

    return _emit("transpose", (a,), (np.ascontiguousarray(a.data.transpose(axes)),), bw)[0]


def concat(tensors, axis: int) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(gs):
        return tuple(np.ascontiguousarray(p) for p in np.split(gs[0], splits, axis=axis))

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _emit("concat", tensors, (out,), bw)[0]


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    if start < 0 or length < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow: [{start},{start + length}) exceeds axis of {a.shape[axis]}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    shape, dt = a.shape, a.dtype

    def bw(gs):
        full = np.zeros(shape, dtype=dt)
        full[idx] = gs[0]
        return (full,)

    return _emit("narrow", (a,), (np.ascontiguousarray(a.data[idx]),), bw)[0]


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows along axis 0 with a 1-D integer index (repeats allowed)."""
    idx = np.asarray(idx)
    nrows = a.shape[0]
    rest = a.shape[1:]

    def bw(gs):
        g2 = gs[0].reshape(idx.shape[0], -1)
        acc = backend.scatter_add_rows(g2, idx, nrows)
        return (acc.reshape((nrows,) + rest),)

    return _emit("gather_rows", (a,), (a.data[idx],), bw)[0]


def scatter_add(a: Tensor, idx: np.ndarray, nrows: int) -> Tensor:
    """Sum rows of a (M,K) tensor into an (nrows,K) result at positions idx."""
    if a.ndim != 2:
        raise ShapeError(f"scatter_add expects 2-D values, got {a.shape}")
    idx = np.asarray(idx)

    def bw(gs):
        return (gs[0][idx],)

    return _emit("scatter_add", (a,), (backend.scatter_add_rows(a.data, idx, nrows),), bw)[0]


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; both operands share identical batch dims (if any)."""
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: incompatible ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(gs):
        (g,) = gs
        return g @ bd.swapaxes(-1, -2), ad.swapaxes(-1, -2) @ g

    return _emit("matmul", (a, b), (ad @ bd,), bw)[0]


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    y = a.data - np.max(a.data, axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= np.sum(y, axis=axis, keepdims=True)

    def bw(gs):
        gy = gs[0] * y
        gy -= y * np.sum(gy, axis=axis, keepdims=True)
        return (gy,)

    return _emit("softmax", (a,), (y,), bw)[0]


def _conv_cols(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """im2col: (C,H,W) -> (C*kh*kw, Ho*Wo) for a given stride."""
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    c, ho, wo = win.shape[:3]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * kh * kw, ho * wo)
    return np.ascontiguousarray(cols), ho, wo


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, pad: int | None = None) -> Tensor:
    """2-D convolution (cross-correlation), zero padding, odd kernels.

    x: (C_in, H, W); w: (C_out, C_in, kh, kw); b: (C_out,) or None.
    pad defaults to kh//2 so odd kernels at stride 1 preserve H and W.
    """
    cin, h, wdt = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin_w != cin:
        raise ShapeError(f"conv2d: input channels {cin} vs kernel {cin_w}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if pad is None:
        pad = kh // 2
    if (h + 2 * pad - kh) % stride or (wdt + 2 * pad - kw) % stride:
        raise ShapeError(
            f"conv2d: grid {h}x{wdt} with pad {pad} kernel {kh}x{kw} "
            f"stride {stride} gives a non-integer output extent")
    inputs = (x, w) if b is None else (x, w, b)
    wm = w.data.reshape(cout, cin * kh * kw)

    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        xf = x.data.reshape(cin, h * wdt)
        out = wm @ xf
        if b is not None:
            out = out + b.data[:, None]
        out = out.reshape(cout, h, wdt)

        def bw(gs):
            g2 = gs[0].reshape(cout, h * wdt)
            dx = (wm.T @ g2).reshape(cin, h, wdt)
            dw = (g2 @ xf.T).reshape(w.shape)
            if b is None:
                return dx, dw
            return dx, dw, g2.sum(axis=1)

        return _emit("conv2d", inputs, (out,), bw)[0]

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    cols, ho, wo = _conv_cols(xp, kh, kw, stride)
    out = (wm @ cols).reshape(cout, ho, wo)
    if b is not None:
        out = out + b.data[:, None, None]

    def bw(gs):
        g = gs[0]
        g2 = g.reshape(cout, ho * wo)
        dw = (g2 @ cols.T).reshape(w.shape)
        if stride == 1:
            gd = g
        else:
            gd = np.zeros((cout, (ho - 1) * stride + 1, (wo - 1) * stride + 1), dtype=g.dtype)
            gd[:, ::stride, ::stride] = g
        gp = np.pad(gd, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
        gcols, hp, wp = _conv_cols(gp, kh, kw, 1)
        wf = np.ascontiguousarray(
            w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)).reshape(cin, cout * kh * kw)
        dxp = (wf @ gcols).reshape(cin, hp, wp)
        dx = np.ascontiguousarray(dxp[:, pad:pad + h, pad:pad + wdt])
        if b is None:
            return dx, dw
        return dx, dw, g2.sum(axis=1)

    return _emit("conv2d", inputs, (out,), bw)[0]


def bilinear_warp(feat: Tensor, disp: Tensor) -> Tensor:
    """Sample feat at (x + disp[0], y + disp[1]); out-of-bounds reads 0.

    feat: (C,H,W); disp: (2,H,W) with channel 0 horizontal, 1 vertical.
    Gradients flow to both the features and the displacement field.
    """
    if disp.ndim != 3 or disp.shape[0] != 2 or disp.shape[1:] != feat.shape[1:]:
        raise ShapeError(f"bilinear_warp: disp {disp.shape} for feat {feat.shape}")
    fd, dd = feat.data, disp.data
    out = backend.bilinear_warp_forward(fd, dd[0], dd[1])

    def bw(gs):
        gf, gdx, gdy = backend.bilinear_warp_backward(fd, dd[0], dd[1], gs[0])
        return gf, np.stack([gdx, gdy])

    return _emit("bilinear_warp", (feat, disp), (out,), bw)[0]


def fft2_pair(re: Tensor, im: Tensor, inverse: bool = False) -> tuple[Tensor, Tensor]:
    """2-D DFT over the last two axes of a (re, im) pair.

    Forward is unnormalized; inverse carries the 1/(HW) factor. The
    backward rule is the opposite-direction transform (the adjoint),
    scaled to match.
    """
    if re.shape != im.shape:
        raise ShapeError(f"fft2_pair: re {re.shape} vs im {im.shape}")
    h, w = re.shape[-2], re.shape[-1]
    orr, oi = backend.fft2_raw(re.data, im.data, inverse=inverse)
    if inverse:
        s = 1.0 / (h * w)
        orr = orr * s
        oi = oi * s

    def bw(gs):
        gr, gi = gs
        br, bi = backend.fft2_raw(gr, gi, inverse=not inverse)
        if inverse:
            s = 1.0 / (h * w)
            return br * s, bi * s
        return br, bi

    return _emit("fft2_pair", (re, im), (orr, oi), bw)


def roll2(a: Tensor, shift: tuple[int, int]) -> Tensor:
    """Circular shift over the last two axes."""
    sy, sx = int(shift[0]), int(shift[1])

    def bw(gs):
        return (np.roll(gs[0], (-sy, -sx), axis=(-2, -1)),)

    return _emit("roll2", (a,), (np.roll(a.data, (sy, sx), axis=(-2, -1)),), bw)[0]


def mirror_half_spectrum(re_h: Tensor, im_h: Tensor, width: int) -> tuple[Tensor, Tensor]:
    """Rebuild a full Hermitian spectrum from its kept half.

    Input (..., H, W/2+1); output (..., H, W). Missing bins are filled
    with the conjugate of their mirrored partner: X[y, x] takes
    conj(X[(H-y) mod H, W-x]).
    """
    h = re_h.shape[-2]
    wh = re_h.shape[-1]
    if wh != width // 2 + 1:
        raise ShapeError(f"mirror_half_spectrum: half width {wh} for full width {width}")
    rows = (h - np.arange(h)) % h
    cols = width - np.arange(wh, width)
    ys = rows[:, None] + np.zeros_like(cols)[None, :]
    xs = np.zeros_like(rows)[:, None] + cols[None, :]

    def assemble(half, sign):
        full = np.empty(half.shape[:-1] + (width,), dtype=half.dtype)
        full[..., :wh] = half
        full[..., wh:] = sign * half[..., ys, xs]
        return full

    def bw(gs):
        gr, gi = gs

        def collapse(g, sign):
            gh = g[..., :wh].copy()
            gh[..., ys, xs] += sign * g[..., wh:]
            return gh

        return collapse(gr, 1.0), collapse(gi, -1.0)

    return _emit("mirror_half_spectrum", (re_h, im_h),
                 (assemble(re_h.data, 1.0), assemble(im_h.data, -1.0)), bw)
