"""LR synthesis, synthetic phantom pairs, and fidelity metrics.

LR images are made by cropping the center of k-space and zero-filling
the rest, so the LR lives on the full HR grid (the ZP convention): the
model's input and output grids are identical and the untrained identity
model reproduces the ZP baseline exactly. Magnitude (not the real part)
is taken after the inverse transform, matching MR reconstruction
practice; it makes the ZP image nonnegative, which the clamp relies on.

Phantoms are ellipse scenes rendered twice with shared geometry but
independent intensities per contrast, emulating two MR weightings of
one anatomy; the reference contrast can be rigidly offset to emulate
inter-scan motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import spectral
from .backend import is_pow2
from .errors import ConfigError, ShapeError
from .tensor import Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _image2d(x) -> np.ndarray:
    a = x.data if isinstance(x, Tensor) else np.asarray(x)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ShapeError(f"expected a (H,W) or (1,H,W) image, got shape {a.shape}")
    return a


def kspace_window(h: int, w: int, scale: int) -> tuple[slice, slice]:
    """Row/col slices of the retained central block in the shifted spectrum."""
    kh, kw = h // scale, w // scale
    y0 = (h - kh) // 2
    x0 = (w - kw) // 2
    return slice(y0, y0 + kh), slice(x0, x0 + kw)


def kspace_crop(hr, scale: int) -> spectral.ComplexTensor:
    """Center-crop the shifted spectrum, zero-fill, and go back to image space.

    Returns the complex reconstruction before the magnitude step; its
    spectrum is exactly zero outside the retained window.
    """
    hr_t = hr if isinstance(hr, Tensor) else Tensor(hr)
    h, w = hr_t.shape[-2], hr_t.shape[-1]
    if not (is_pow2(h) and is_pow2(w)):
        raise ConfigError(f"grid {h}x{w} must be powers of two")
    if scale < 1 or h % scale or w % scale:
        raise ConfigError(f"scale {scale} must divide the {h}x{w} grid")
    zeros = Tensor(np.zeros(hr_t.shape, dtype=hr_t.dtype))
    spec = spectral.fftshift2(spectral.fft2(spectral.ComplexTensor(hr_t, zeros)))
    ys, xs = kspace_window(h, w, scale)
    mask = np.zeros((h, w), dtype=hr_t.dtype)
    mask[ys, xs] = 1
    from . import ops
    kept = spectral.ComplexTensor(ops.mul_const(spec.re, mask), ops.mul_const(spec.im, mask))
    return spectral.ifft2(spectral.ifftshift2(kept))


def degrade_kspace(hr, scale: int) -> Tensor:
    """HR image -> zero-padded LR on the same grid, in [0,1]."""
    if scale == 1:
        # No bins are discarded, so the chain collapses to magnitude+clamp
        # exactly; going through the transform would only add roundoff.
        hr_t = hr if isinstance(hr, Tensor) else Tensor(hr)
        h, w = hr_t.shape[-2], hr_t.shape[-1]
        if not (is_pow2(h) and is_pow2(w)):
            raise ConfigError(f"grid {h}x{w} must be powers of two")
        return Tensor(np.clip(np.abs(hr_t.data), 0.0, 1.0))
    z = kspace_crop(hr, scale)
    mag = np.hypot(z.re.data, z.im.data)
    return Tensor(np.clip(mag, 0.0, 1.0))


@dataclass
class PhantomSpec:
    seed: int = 0
    size: int = 64
    min_ellipses: int = 4
    max_ellipses: int = 8
    offset: tuple[float, float] = (0.0, 0.0)  # (dy, dx) applied to the reference
    scale: int = 4
    dtype: type = np.float32


@dataclass
class ImagePair:
    tar_hr: Tensor  # (1,H,W) in [0,1]
    ref_hr: Tensor  # (1,H,W) in [0,1]
    tar_lr: Tensor  # (1,H,W) zero-padded reconstruction
    scale: int


def _render_ellipses(size: int, params: np.ndarray, intensities: np.ndarray,
                     dy: float = 0.0, dx: float = 0.0) -> np.ndarray:
    """Paint ellipses over a black canvas; later ellipses overwrite earlier."""
    img = np.zeros((size, size), dtype=np.float64)
    yy, xx = np.mgrid[0:size, 0:size]
    for (cy, cx, a, b, theta), val in zip(params, intensities):
        u = xx - (cx + dx)
        v = yy - (cy + dy)
        ct, st = math.cos(theta), math.sin(theta)
        ru = u * ct + v * st
        rv = -u * st + v * ct
        img[(ru / a) ** 2 + (rv / b) ** 2 <= 1.0] = val
    return img


def generate_phantom_pair(spec: PhantomSpec) -> ImagePair:
    """Shared geometry, two intensity assignments, optional reference offset."""
    rng = np.random.default_rng(spec.seed)
    n = int(rng.integers(spec.min_ellipses, spec.max_ellipses + 1))
    params = np.column_stack([
        rng.uniform(0.2 * spec.size, 0.8 * spec.size, n),   # cy
        rng.uniform(0.2 * spec.size, 0.8 * spec.size, n),   # cx
        rng.uniform(0.08 * spec.size, 0.30 * spec.size, n),  # a
        rng.uniform(0.08 * spec.size, 0.30 * spec.size, n),  # b
        rng.uniform(0.0, math.pi, n),                        # theta
    ]) if n else np.zeros((0, 5))
    tar_int = rng.uniform(0.2, 0.85, n)
    ref_int = rng.uniform(0.2, 0.85, n)
    dy, dx = spec.offset
    tar = _render_ellipses(spec.size, params, tar_int)
    ref = _render_ellipses(spec.size, params, ref_int, dy=dy, dx=dx)
    tar_hr = Tensor(tar[None].astype(spec.dtype))
    ref_hr = Tensor(ref[None].astype(spec.dtype))
    return ImagePair(tar_hr, ref_hr, degrade_kspace(tar_hr, spec.scale), spec.scale)


def psnr(x, y, max_val: float = 1.0) -> float:
    """10*log10(max_val^2 / MSE); +inf when the images are identical."""
    a, b = _image2d(x), _image2d(y)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes {a.shape} vs {b.shape}")
    if max_val <= 0:
        raise ConfigError(f"psnr: max_val must be positive, got {max_val}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / mse)


def _gauss_window() -> np.ndarray:
    r = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2
    g = np.exp(-(r * r) / (2 * SSIM_SIGMA * SSIM_SIGMA))
    return g / g.sum()


def _win_filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable windowed correlation with zero padding ('same' size)."""
    half = SSIM_WINDOW // 2
    out = img
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (half, half)
        p = np.pad(out, pad)
        out = sliding_window_view(p, SSIM_WINDOW, axis=axis) @ g
    return out


def ssim(x, y) -> float:
    """Mean SSIM, Gaussian 11x11 window, renormalized at the borders."""
    a, b = _image2d(x).astype(np.float64), _image2d(y).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes {a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ConfigError(f"ssim: image {a.shape} smaller than the {SSIM_WINDOW}px window")
    g = _gauss_window()
    wmass = _win_filter(np.ones_like(a), g)

    def wmean(img):
        return _win_filter(img, g) / wmass

    mu_x = wmean(a)
    mu_y = wmean(b)
    sxx = wmean(a * a) - mu_x * mu_x
    syy = wmean(b * b) - mu_y * mu_y
    sxy = wmean(a * b) - mu_x * mu_y
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    smap = ((2 * mu_x * mu_y + c1) * (2 * sxy + c2)) / \
        ((mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2))
    return float(np.mean(smap))


def rmse(x, y) -> float:
    """sqrt(mean squared error) x 100, for [0,1]-range images."""
    a, b = _image2d(x), _image2d(y)
    if a.shape != b.shape:
        raise ShapeError(f"rmse: shapes {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)) * 100.0)


def evaluate_pair(pred, gt) -> tuple[float, float, float]:
    """(psnr, ssim, rmse) after ground-truth-max normalization and clamping."""
    p, g = _image2d(pred).astype(np.float64), _image2d(gt).astype(np.float64)
    m = float(g.max())
    if m <= 0:
        m = 1.0
    p = np.clip(p / m, 0.0, 1.0)
    g = np.clip(g / m, 0.0, 1.0)
    return psnr(p, g), ssim(p, g), rmse(p, g)
