"""2-D Fourier transforms on tensors, with a naive-DFT oracle.

Convention: forward transforms are unnormalized; inverse transforms
carry the 1/(HW) factor, so ifft2(fft2(x)) == x. The fast path is a
radix-2 implementation and therefore demands power-of-two extents on
the last two axes; ``naive_dft2`` accepts any size and exists as the
permanent reference the fast path is tested against.

All transform entry points are differentiable: their backward rules are
the adjoint (opposite-direction) transforms.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .backend import is_pow2
from .errors import ShapeError, UnsupportedSizeError
from .tensor import Tensor


class ComplexTensor:
    """A complex array carried as two same-shape real tensors."""

    __slots__ = ("re", "im")

    def __init__(self, re: Tensor, im: Tensor):
        if re.shape != im.shape:
            raise ShapeError(f"ComplexTensor: re {re.shape} vs im {im.shape}")
        self.re = re
        self.im = im

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    def __repr__(self) -> str:
        return f"ComplexTensor(shape={self.shape}, dtype={self.re.dtype.name})"


def _check_pow2(shape) -> None:
    h, w = shape[-2], shape[-1]
    if not (is_pow2(h) and is_pow2(w)):
        raise UnsupportedSizeError(
            f"radix-2 transform needs power-of-two extents, got {h}x{w}; "
            "pad the input to the next power of two")


def _zeros_like(t: Tensor) -> Tensor:
    return Tensor._wrap(np.zeros(t.shape, dtype=t.dtype))


def fft2(x: ComplexTensor) -> ComplexTensor:
    """Unnormalized forward DFT over the last two axes."""
    _check_pow2(x.shape)
    re, im = ops.fft2_pair(x.re, x.im, inverse=False)
    return ComplexTensor(re, im)


def ifft2(x: ComplexTensor) -> ComplexTensor:
    """Inverse DFT with 1/(HW) normalization."""
    _check_pow2(x.shape)
    re, im = ops.fft2_pair(x.re, x.im, inverse=True)
    return ComplexTensor(re, im)


def rfft2(x: Tensor) -> ComplexTensor:
    """DFT of a real tensor, keeping the first floor(W/2)+1 column bins."""
    _check_pow2(x.shape)
    w = x.shape[-1]
    re, im = ops.fft2_pair(x, _zeros_like(x), inverse=False)
    keep = w // 2 + 1
    return ComplexTensor(ops.narrow(re, x.ndim - 1, 0, keep),
                         ops.narrow(im, x.ndim - 1, 0, keep))


def irfft2(x: ComplexTensor, width: int) -> Tensor:
    """Invert rfft2: rebuild the Hermitian spectrum, transform, keep the real part."""
    h = x.shape[-2]
    if not (is_pow2(h) and is_pow2(width)):
        raise UnsupportedSizeError(
            f"radix-2 transform needs power-of-two extents, got {h}x{width}; "
            "pad the input to the next power of two")
    if x.shape[-1] != width // 2 + 1:
        raise ShapeError(f"irfft2: half width {x.shape[-1]} does not match width {width}")
    fr, fi = ops.mirror_half_spectrum(x.re, x.im, width)
    re, _ = ops.fft2_pair(fr, fi, inverse=True)
    return re


def fftshift2(x: ComplexTensor) -> ComplexTensor:
    """Move the DC bin to (H//2, W//2)."""
    h, w = x.shape[-2], x.shape[-1]
    return ComplexTensor(ops.roll2(x.re, (h // 2, w // 2)),
                         ops.roll2(x.im, (h // 2, w // 2)))


def ifftshift2(x: ComplexTensor) -> ComplexTensor:
    """Undo fftshift2 exactly, for odd extents included."""
    h, w = x.shape[-2], x.shape[-1]
    return ComplexTensor(ops.roll2(x.re, (-(h // 2), -(w // 2))),
                         ops.roll2(x.im, (-(h // 2), -(w // 2))))


def naive_dft2(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """O(N^2) reference DFT over the last two axes of a complex array.

    Any extents accepted. Same normalization convention as fft2/ifft2.
    """
    z = np.asarray(z, dtype=np.complex128)
    h, w = z.shape[-2], z.shape[-1]
    sign = 2j * np.pi if inverse else -2j * np.pi
    fh = np.exp(sign * np.outer(np.arange(h), np.arange(h)) / h)
    fw = np.exp(sign * np.outer(np.arange(w), np.arange(w)) / w)
    out = fh @ z @ fw
    if inverse:
        out = out / (h * w)
    return out
