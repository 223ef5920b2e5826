"""Kernel backend selection: compiled Cython extension or numpy fallback.

The hot loop-bound kernels (bilinear warp, radix-2 FFT butterflies,
row scatter-add) have two interchangeable implementations. The compiled
one is preferred when importable; ``SSCM_BACKEND=python|compiled|auto``
overrides the choice, and :func:`select` switches at runtime (used by the
parity tests and the benchmark).

Convolutions and attention matmuls are *not* backend kernels: both
backends would route them through BLAS via im2col/GEMM anyway, so they
are implemented once in ``sscm.ops``.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import ConfigError
from . import pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built; fallback stays active
    _compiled = None

_active = pykernels


def available_backends() -> list[str]:
    names = ["python"]
    if _compiled is not None:
        names.append("compiled")
    return names


def select(name: str) -> None:
    """Switch the active kernel set ('python', 'compiled', or 'auto')."""
    global _active
    if name == "auto":
        name = "compiled" if _compiled is not None else "python"
    if name == "python":
        _active = pykernels
    elif name == "compiled":
        if _compiled is None:
            raise ConfigError("compiled backend requested but extension not built")
        _active = _compiled
    else:
        raise ConfigError(f"unknown backend {name!r}")


def active_backend() -> str:
    return _active.name


select(os.environ.get("SSCM_BACKEND", "auto"))


# ------------------------------------------------------------ dispatchers --


def fft1d_batch(re, im, inverse):
    return _active.fft1d_batch(re, im, inverse)


def bilinear_warp_forward(feat, dx, dy):
    return _active.bilinear_warp_forward(feat, dx, dy)


def bilinear_warp_backward(feat, dx, dy, gout):
    return _active.bilinear_warp_backward(feat, dx, dy, gout)


def scatter_add_rows(values, idx, nrows):
    return _active.scatter_add_rows(values, idx, nrows)


# ----------------------------------------------------------- 2-D transform --


def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def fft2_raw(re: np.ndarray, im: np.ndarray, inverse: bool):
    """Unnormalized 2-D DFT over the last two axes of (..., H, W) arrays.

    Power-of-two extents only; callers apply the 1/(H*W) inverse scaling.
    """
    h, w = re.shape[-2], re.shape[-1]
    lead = re.shape[:-2]
    rr = np.ascontiguousarray(re.reshape(-1, w))
    ii = np.ascontiguousarray(im.reshape(-1, w))
    rr, ii = fft1d_batch(rr, ii, inverse)
    rr = rr.reshape(*lead, h, w).swapaxes(-1, -2)
    ii = ii.reshape(*lead, h, w).swapaxes(-1, -2)
    rr = np.ascontiguousarray(rr.reshape(-1, h))
    ii = np.ascontiguousarray(ii.reshape(-1, h))
    rr, ii = fft1d_batch(rr, ii, inverse)
    rr = rr.reshape(*lead, w, h).swapaxes(-1, -2)
    ii = ii.reshape(*lead, w, h).swapaxes(-1, -2)
    return np.ascontiguousarray(rr), np.ascontiguousarray(ii)
