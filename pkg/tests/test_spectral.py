"""Spectral identities: naive-DFT oracle, Parseval, adjoint, roundtrips."""

import numpy as np
import pytest

from sscm import ops, spectral
from sscm.errors import ShapeError, UnsupportedSizeError
from sscm.spectral import ComplexTensor, fft2, fftshift2, ifft2, ifftshift2, irfft2, naive_dft2, rfft2
from sscm.tensor import Tensor, record


def complex_pair(rng, shape, dtype=np.float64):
    re = Tensor(rng.normal(size=shape).astype(dtype))
    im = Tensor(rng.normal(size=shape).astype(dtype))
    return ComplexTensor(re, im)


def to_complex(z: ComplexTensor) -> np.ndarray:
    return z.re.data.astype(np.float64) + 1j * z.im.data.astype(np.float64)


@pytest.mark.parametrize("h,w", [(2, 2), (4, 4), (8, 8), (16, 16), (4, 16), (16, 2)])
def test_fft2_matches_naive_dft(h, w):
    rng = np.random.default_rng(h * 31 + w)
    z = complex_pair(rng, (1, h, w))
    got = to_complex(fft2(z))
    want = naive_dft2(to_complex(z))
    assert np.max(np.abs(got - want)) <= 1e-10


@pytest.mark.parametrize("h,w", [(4, 4), (8, 16)])
def test_ifft2_matches_naive_inverse(h, w):
    rng = np.random.default_rng(h + w)
    z = complex_pair(rng, (1, h, w))
    got = to_complex(ifft2(z))
    want = naive_dft2(to_complex(z), inverse=True)
    assert np.max(np.abs(got - want)) <= 1e-10


def test_roundtrip_identity():
    rng = np.random.default_rng(0)
    z = complex_pair(rng, (2, 8, 8))
    back = ifft2(fft2(z))
    assert np.max(np.abs(to_complex(back) - to_complex(z))) <= 1e-10


def test_parseval_energy():
    # sum |x|^2 == sum |X|^2 / (HW) for the unnormalized forward transform
    rng = np.random.default_rng(1)
    z = complex_pair(rng, (1, 16, 16))
    x = to_complex(z)
    spec = to_complex(fft2(z))
    lhs = np.sum(np.abs(x) ** 2)
    rhs = np.sum(np.abs(spec) ** 2) / (16 * 16)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, lhs)


def test_linearity():
    rng = np.random.default_rng(2)
    a = complex_pair(rng, (1, 8, 8))
    b = complex_pair(rng, (1, 8, 8))
    lhs = to_complex(fft2(ComplexTensor(ops.add(a.re, b.re), ops.add(a.im, b.im))))
    rhs = to_complex(fft2(a)) + to_complex(fft2(b))
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_real_input_hermitian_symmetry():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 8, 8))
    z = ComplexTensor(Tensor(x), Tensor(np.zeros_like(x)))
    spec = to_complex(fft2(z))[0]
    h, w = spec.shape
    for ky in range(h):
        for kx in range(w):
            assert abs(spec[ky, kx] - np.conj(spec[-ky % h, -kx % w])) <= 1e-10


def test_adjoint_identity():
    # <F x, y> == <x, F^H y>; F^H is the unnormalized inverse (conjugate transform)
    rng = np.random.default_rng(4)
    x = complex_pair(rng, (1, 8, 8))
    y = complex_pair(rng, (1, 8, 8))
    fx = to_complex(fft2(x))
    # unnormalized adjoint: conj(F(conj(y)))
    yc = to_complex(y)
    fhy = np.conj(naive_dft2(np.conj(yc)))
    lhs = np.vdot(fx, to_complex(y))
    rhs = np.vdot(to_complex(x), fhy)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_impulse_gives_flat_spectrum():
    x = np.zeros((1, 8, 8))
    x[0, 0, 0] = 1.0
    spec = to_complex(fft2(ComplexTensor(Tensor(x), Tensor(np.zeros_like(x)))))
    assert np.max(np.abs(spec - 1.0)) <= 1e-12


def test_rfft2_matches_full_transform():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 8, 8))
    half = rfft2(Tensor(x))
    assert half.re.shape == (2, 8, 5)
    full = np.fft.fft2(x)
    got = to_complex(half)
    assert np.max(np.abs(got - full[..., :5])) <= 1e-10


def test_irfft2_roundtrip():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 16, 16))
    back = irfft2(rfft2(Tensor(x)), 16)
    assert np.max(np.abs(back.data - x)) <= 1e-10


def test_irfft2_wrong_width():
    rng = np.random.default_rng(7)
    half = rfft2(Tensor(rng.normal(size=(1, 8, 8))))
    with pytest.raises(ShapeError):
        irfft2(half, 16)  # a 16-wide image needs a 9-column half-spectrum
    with pytest.raises(UnsupportedSizeError):
        irfft2(half, 12)


def test_fftshift_moves_dc_to_center():
    x = np.zeros((1, 8, 8))
    x[0, 0, 0] = 1.0
    z = ComplexTensor(Tensor(x), Tensor(np.zeros_like(x)))
    shifted = fftshift2(z)
    assert shifted.re.data[0, 4, 4] == 1.0
    back = ifftshift2(shifted)
    assert np.array_equal(back.re.data, x)


def test_non_power_of_two_rejected():
    z = ComplexTensor(Tensor(np.zeros((1, 6, 8))), Tensor(np.zeros((1, 6, 8))))
    with pytest.raises(UnsupportedSizeError):
        fft2(z)


def test_fft_gradient_is_adjoint_transform():
    rng = np.random.default_rng(8)
    re = Tensor(rng.normal(size=(1, 8, 8)), requires_grad=True)
    im = Tensor(rng.normal(size=(1, 8, 8)), requires_grad=True)
    w_re = rng.normal(size=(1, 8, 8))
    w_im = rng.normal(size=(1, 8, 8))

    def loss_fn():
        fr, fi = ops.fft2_pair(re, im, inverse=False)
        return ops.sum_all(ops.add(ops.mul_const(fr, w_re), ops.mul_const(fi, w_im)))

    with record() as tape:
        tape.backward(loss_fn())
    # d/dx sum(w_re*Re(Fx) + w_im*Im(Fx)) = Re/Im of the conjugate transform of w
    w = w_re + 1j * w_im
    adj = np.conj(naive_dft2(np.conj(w)))
    assert np.max(np.abs(re.grad - adj.real)) <= 1e-10
    assert np.max(np.abs(im.grad - adj.imag)) <= 1e-10


def test_naive_dft_any_size():
    rng = np.random.default_rng(9)
    z = rng.normal(size=(1, 3, 5)) + 1j * rng.normal(size=(1, 3, 5))
    got = naive_dft2(z)
    want = np.fft.fft2(z)
    assert np.max(np.abs(got - want)) <= 1e-10
    back = naive_dft2(got, inverse=True)
    assert np.max(np.abs(back - z)) <= 1e-10
