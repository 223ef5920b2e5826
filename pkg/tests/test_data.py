"""Degradation contracts, phantom generation, and metric analytic cases."""

import numpy as np
import pytest

from sscm import data, fileio, spectral
from sscm.errors import ConfigError, FormatError, ShapeError
from sscm.tensor import Tensor


def smooth_image(hw=64):
    yy, xx = np.mgrid[0:hw, 0:hw] / hw
    img = 0.5 + 0.3 * np.exp(-((yy - 0.4) ** 2 + (xx - 0.6) ** 2) / 0.02) \
        + 0.1 * np.sin(2 * np.pi * 2 * xx)
    return img[None]


# ---------- degradation ----------

def test_scale_one_is_identity():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (1, 32, 32))
    lr = data.degrade_kspace(x, 1)
    assert np.max(np.abs(lr.data - x)) <= 1e-5


def test_constant_image_unchanged():
    c = np.full((1, 64, 64), 0.37)
    lr = data.degrade_kspace(c, 4)
    assert np.max(np.abs(lr.data - 0.37)) <= 1e-12


def test_checkerboard_nyquist_energy_removed():
    # the (N/2, N/2) bin of a Nyquist checkerboard falls outside the kept
    # window for s=4, so only the DC term survives
    ch = np.indices((64, 64)).sum(0) % 2
    cb = (0.25 + 0.5 * ch)[None]
    ys, xs = data.kspace_window(64, 64, 4)
    assert not (ys.start <= 0 + 32 < ys.stop and False)  # window is centered
    lr = data.degrade_kspace(cb, 4)
    assert np.max(np.abs(lr.data - 0.5)) <= 1e-10


def test_spectrum_zero_outside_window():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (1, 32, 32))  # f64
    z = data.kspace_crop(x, 4)
    spec = spectral.fftshift2(spectral.fft2(spectral.ComplexTensor(z.re, z.im)))
    mag = np.hypot(spec.re.data, spec.im.data)[0]
    ys, xs = data.kspace_window(32, 32, 4)
    inside = np.zeros((32, 32), bool)
    inside[ys, xs] = True
    assert mag[~inside].max() <= 1e-10


def test_degradation_nearly_idempotent_on_smooth_scene():
    # magnitude is nonlinear, so exact idempotence cannot hold in general;
    # for a smooth nonnegative scene the second pass is a tiny perturbation
    x = smooth_image()
    lr1 = data.degrade_kspace(x, 4)
    lr2 = data.degrade_kspace(lr1, 4)
    assert np.max(np.abs(lr2.data - lr1.data)) <= 1e-5


def test_degrade_rejects_bad_scale():
    x = np.zeros((1, 32, 32))
    with pytest.raises(ConfigError):
        data.degrade_kspace(x, 3)
    with pytest.raises(ConfigError):
        data.degrade_kspace(np.zeros((1, 24, 24)), 4)


def test_degrade_output_range_and_grid():
    p = data.generate_phantom_pair(data.PhantomSpec(seed=4, size=64, scale=4))
    assert p.tar_lr.shape == (1, 64, 64)
    assert p.tar_lr.data.min() >= 0.0
    assert p.tar_lr.data.max() <= 1.0


# ---------- phantoms ----------

def test_phantom_determinism():
    spec = data.PhantomSpec(seed=9, size=32, scale=4)
    a = data.generate_phantom_pair(spec)
    b = data.generate_phantom_pair(spec)
    assert np.array_equal(a.tar_hr.data, b.tar_hr.data)
    assert np.array_equal(a.ref_hr.data, b.ref_hr.data)
    assert np.array_equal(a.tar_lr.data, b.tar_lr.data)


def test_phantom_zero_ellipses_black():
    spec = data.PhantomSpec(seed=0, size=32, min_ellipses=0, max_ellipses=0, scale=4)
    p = data.generate_phantom_pair(spec)
    assert np.array_equal(p.tar_hr.data, np.zeros((1, 32, 32), np.float32))
    assert np.array_equal(p.ref_hr.data, np.zeros((1, 32, 32), np.float32))


def test_phantom_offset_shifts_reference_geometry():
    base = data.generate_phantom_pair(data.PhantomSpec(seed=11, size=64, scale=4))
    moved = data.generate_phantom_pair(
        data.PhantomSpec(seed=11, size=64, offset=(2.0, 0.0), scale=4))
    # rolling the offset reference back by 2 rows recovers the unmoved one
    rolled = np.roll(moved.ref_hr.data[0], -2, axis=0)
    assert np.array_equal(rolled[2:-2], base.ref_hr.data[0][2:-2])
    assert not np.array_equal(moved.ref_hr.data, base.ref_hr.data)


def test_phantom_offset_correlation_peak():
    base = data.generate_phantom_pair(data.PhantomSpec(seed=12, size=64, scale=4))
    moved = data.generate_phantom_pair(
        data.PhantomSpec(seed=12, size=64, offset=(2.0, 0.0), scale=4))
    a = base.ref_hr.data[0] - base.ref_hr.data[0].mean()
    b = moved.ref_hr.data[0] - moved.ref_hr.data[0].mean()
    scores = {}
    for dy in range(-3, 4):
        for dx in range(-3, 4):
            scores[(dy, dx)] = float(np.sum(a * np.roll(b, (-dy, -dx), (0, 1))))
    assert max(scores, key=scores.get) == (2, 0)


def test_phantom_contrasts_share_geometry_not_intensities():
    p = data.generate_phantom_pair(data.PhantomSpec(seed=13, size=64, scale=4))
    tar, ref = p.tar_hr.data[0], p.ref_hr.data[0]
    assert np.array_equal(tar > 0, ref > 0)  # same support
    assert not np.array_equal(tar, ref)      # different intensity maps


# ---------- metrics ----------

def test_psnr_closed_forms():
    x = np.full((16, 16), 0.5)
    assert data.psnr(x, x) == float("inf")
    assert data.psnr(x, x + 0.1) == pytest.approx(20.0, abs=1e-9)   # MSE 0.01
    assert data.psnr(x, x + 0.01) == pytest.approx(40.0, abs=1e-9)  # MSE 1e-4


def test_psnr_monotone_in_mse():
    x = np.zeros((8, 8))
    values = [data.psnr(x, x + d) for d in (0.01, 0.05, 0.1, 0.4)]
    assert values == sorted(values, reverse=True)


def test_psnr_shape_and_maxval_checks():
    with pytest.raises(ShapeError):
        data.psnr(np.zeros((4, 4)), np.zeros((5, 5)))
    with pytest.raises(ConfigError):
        data.psnr(np.zeros((4, 4)), np.zeros((4, 4)), max_val=0.0)


def test_ssim_self_is_exactly_one():
    img = np.random.default_rng(1).uniform(0, 1, (32, 32))
    assert data.ssim(img, img) == 1.0


def test_ssim_symmetric_bitwise():
    rng = np.random.default_rng(2)
    a = rng.uniform(0, 1, (16, 16))
    b = rng.uniform(0, 1, (16, 16))
    assert data.ssim(a, b) == data.ssim(b, a)


def test_ssim_matches_direct_formula_on_binary_image():
    rng = np.random.default_rng(3)
    x = (rng.uniform(0, 1, (16, 16)) > 0.5).astype(np.float64)
    y = 1.0 - x
    got = data.ssim(x, y)

    # independent straight-line evaluation with the same window convention
    g1 = np.exp(-((np.arange(11) - 5.0) ** 2) / (2 * 1.5 ** 2))
    g1 /= g1.sum()
    w2 = np.outer(g1, g1)

    def wfield(img):
        out = np.zeros_like(img)
        den = np.zeros_like(img)
        h, w = img.shape
        for i in range(h):
            for j in range(w):
                acc = wacc = 0.0
                for u in range(-5, 6):
                    for v in range(-5, 6):
                        if 0 <= i + u < h and 0 <= j + v < w:
                            wgt = w2[u + 5, v + 5]
                            acc += wgt * img[i + u, j + v]
                            wacc += wgt
                out[i, j] = acc
                den[i, j] = wacc
        return out / den

    mx, my = wfield(x), wfield(y)
    sxx = wfield(x * x) - mx * mx
    syy = wfield(y * y) - my * my
    sxy = wfield(x * y) - mx * my
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / \
        ((mx ** 2 + my ** 2 + c1) * (sxx + syy + c2))
    assert got == pytest.approx(float(smap.mean()), abs=1e-12)


def test_ssim_range_and_small_image_rejected():
    rng = np.random.default_rng(4)
    a = rng.uniform(0, 1, (16, 16))
    b = rng.uniform(0, 1, (16, 16))
    assert -1.0 <= data.ssim(a, b) <= 1.0
    with pytest.raises(ConfigError):
        data.ssim(np.ones((10, 10)), np.ones((10, 10)))


def test_rmse_closed_forms():
    x = np.full((8, 8), 0.4)
    assert data.rmse(x, x) == 0.0
    assert data.rmse(x, x + 0.1) == pytest.approx(10.0, abs=1e-9)


def test_rmse_matches_two_pass_oracle():
    rng = np.random.default_rng(5)
    a = rng.uniform(0, 1, (16, 16))
    b = rng.uniform(0, 1, (16, 16))
    diffs = [(float(p) - float(q)) ** 2 for p, q in zip(a.ravel(), b.ravel())]
    want = (sum(diffs) / len(diffs)) ** 0.5 * 100.0
    assert data.rmse(a, b) == pytest.approx(want, rel=1e-12)


def test_evaluate_pair_normalizes_by_gt_max():
    gt = np.full((16, 16), 2.0)
    pred = np.full((16, 16), 1.8)  # off by 0.1 after dividing by max=2
    p, s, r = data.evaluate_pair(pred, gt)
    assert p == pytest.approx(20.0, abs=1e-9)
    assert r == pytest.approx(10.0, abs=1e-9)


def test_evaluate_pair_clamps_prediction():
    gt = np.full((16, 16), 1.0)
    pred = np.full((16, 16), 5.0)  # clamps to 1.0 -> perfect score
    p, s, r = data.evaluate_pair(pred, gt)
    assert p == float("inf")
    assert s == 1.0
    assert r == 0.0


def test_metrics_accept_tensors_and_channel_dim():
    t = Tensor(np.random.default_rng(6).uniform(0, 1, (1, 16, 16)).astype(np.float32))
    assert data.psnr(t, t) == float("inf")
    assert data.ssim(t, t) == 1.0
    assert data.rmse(t, t) == 0.0
