"""Central-difference gradient verification for every differentiable op.

Each case builds a scalar loss from fresh f64 tensors, runs one taped
backward pass, then perturbs a deterministic sample of coordinates and
compares the analytic gradient against (f(x+e) - f(x-e)) / 2e. The
relative error uses max(|analytic|, |numeric|, 1e-3) as denominator so
near-zero gradients are judged on absolute scale.

Cases re-run identically under a fixed seed, so the suite either always
passes or always fails for a given build; nothing is sampled at random
between invocations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops, spectral
from .model import SSCMModel, desk_config
from .satab import SATAB, WindowAttention
from .tensor import Tensor, record
from .train import l1_loss
from .warp import DSWM

THRESHOLD = 1e-4
EPS_BASE = 1e-5


def check_gradients(loss_fn, params, rng, samples_per_param: int = 12,
                    eps_base: float = EPS_BASE) -> tuple[float, int]:
    """Max relative error over sampled coordinates of each parameter."""
    for p in params:
        p.zero_grad()
    with record() as tape:
        loss = loss_fn()
        tape.backward(loss)
    analytic = []
    for p in params:
        if p.grad is None:
            analytic.append(np.zeros(p.size))
        else:
            analytic.append(p.grad.reshape(-1).astype(np.float64).copy())
    worst = 0.0
    checked = 0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = min(samples_per_param, flat.size)
        coords = rng.choice(flat.size, size=n, replace=False)
        for c in coords:
            old = float(flat[c])
            eps = eps_base * max(1.0, abs(old))
            flat[c] = old + eps
            fp = float(loss_fn().item())
            flat[c] = old - eps
            fm = float(loss_fn().item())
            flat[c] = old
            fd = (fp - fm) / (2.0 * eps)
            ad = float(grad[c])
            rel = abs(ad - fd) / max(abs(ad), abs(fd), 1e-3)
            worst = max(worst, rel)
            checked += 1
    return worst, checked


@dataclass
class GradEntry:
    name: str
    max_rel_err: float
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= THRESHOLD


@dataclass
class GradReport:
    entries: list[GradEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def lines(self) -> list[str]:
        out = []
        for e in self.entries:
            tag = "ok" if e.passed else "FAIL"
            out.append(f"{e.name:<28s} rel_err={e.max_rel_err:.3e} ({e.checked} coords) {tag}")
        return out


def _t(rng, *shape, lo=-1.0, hi=1.0, rg=True) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=rg)


def _case_elementwise(rng):
    a = _t(rng, 3, 4)
    b = _t(rng, 3, 4)

    def loss():
        y = ops.mul(ops.add(a, b), ops.sub(a, b))
        y = ops.add_const(ops.scale(ops.neg(y), 0.7), np.float64(0.3))
        y = ops.mul_const(y, np.full((3, 4), 1.5))
        return ops.sum_all(ops.mul(y, y))
    return loss, [a, b]


def _case_relu(rng):
    a = _t(rng, 5, 5)
    a.data += np.where(a.data >= 0, 0.3, -0.3)  # keep away from the kink

    def loss():
        return ops.sum_all(ops.mul(ops.relu(a), ops.relu(a)))
    return loss, [a]


def _case_gelu(rng):
    a = _t(rng, 4, 6)

    def loss():
        y = ops.gelu(a)
        return ops.sum_all(ops.mul(y, y))
    return loss, [a]


def _case_absolute(rng):
    a = _t(rng, 4, 4)
    a.data += np.where(a.data >= 0, 0.5, -0.5)

    def loss():
        return ops.mean_all(ops.absolute(a))
    return loss, [a]


def _case_softmax(rng):
    a = _t(rng, 3, 7)
    w = _t(rng, 3, 7)

    def loss():
        return ops.sum_all(ops.mul(ops.softmax(a, axis=-1), w))
    return loss, [a, w]


def _case_matmul(rng):
    a = _t(rng, 4, 3)
    b = _t(rng, 3, 5)

    def loss():
        y = ops.matmul(a, b)
        return ops.sum_all(ops.mul(y, y))
    return loss, [a, b]


def _case_matmul_batched(rng):
    a = _t(rng, 2, 3, 4, 5)
    b = _t(rng, 2, 3, 5, 2)

    def loss():
        y = ops.matmul(a, b)
        return ops.sum_all(ops.mul(y, y))
    return loss, [a, b]


def _case_shapes(rng):
    a = _t(rng, 2, 3, 4)
    b = _t(rng, 2, 3, 4)

    def loss():
        x = ops.transpose(ops.reshape(a, (3, 2, 4)), (1, 0, 2))
        y = ops.concat([x, ops.reshape(b, (2, 3, 4))], axis=2)
        z = ops.narrow(y, 2, 1, 5)
        return ops.sum_all(ops.mul(z, z))
    return loss, [a, b]


def _case_gather_scatter(rng):
    a = _t(rng, 6, 3)
    idx = np.array([4, 0, 0, 5, 2, 1, 4, 3], dtype=np.int64)
    back = np.array([1, 0, 3, 3, 2, 1, 0, 2], dtype=np.int64)

    def loss():
        g = ops.gather_rows(a, idx)
        s = ops.scatter_add(g, back, 4)
        return ops.sum_all(ops.mul(s, s))
    return loss, [a]


def _conv_case(rng, k, stride, cin, cout, hw, bias):
    x = _t(rng, cin, hw, hw)
    w = _t(rng, cout, cin, k, k, lo=-0.5, hi=0.5)
    b = _t(rng, cout) if bias else None

    def loss():
        y = ops.conv2d(x, w, b, stride=stride, pad=k // 2)
        return ops.sum_all(ops.mul(y, y))
    return loss, [x, w] + ([b] if bias else [])


def _case_conv3(rng):
    return _conv_case(rng, 3, 1, 2, 3, 6, bias=True)


def _case_conv1(rng):
    return _conv_case(rng, 1, 1, 3, 2, 5, bias=False)


def _case_conv3_s2(rng):
    return _conv_case(rng, 3, 2, 2, 2, 7, bias=True)


def _case_warp(rng):
    feat = _t(rng, 3, 6, 6)
    disp = Tensor(rng.uniform(0.1, 0.4, (2, 6, 6)), requires_grad=True)

    def loss():
        y = ops.bilinear_warp(feat, disp)
        return ops.sum_all(ops.mul(y, y))
    return loss, [feat, disp]


def _case_fft(rng):
    re = _t(rng, 2, 8, 8)
    im = _t(rng, 2, 8, 8)

    def loss():
        fr, fi = ops.fft2_pair(re, im, inverse=False)
        br, bi = ops.fft2_pair(fr, fi, inverse=True)
        mix = ops.add(ops.mul(fr, fi), ops.mul(br, bi))
        return ops.sum_all(mix)
    return loss, [re, im]


def _case_rfft_chain(rng):
    x = _t(rng, 1, 8, 8)
    w = _t(rng, 1, 8, 8)

    def loss():
        z = spectral.rfft2(x)
        back = spectral.irfft2(spectral.ComplexTensor(ops.gelu(z.re), ops.gelu(z.im)), 8)
        return ops.sum_all(ops.mul(back, w))
    return loss, [x, w]


def _case_window_attention(rng):
    win = WindowAttention(4, heads=2, window=4, stride=2,
                          rng=np.random.default_rng(11), dtype=np.float64)
    x = _t(rng, 4, 6, 6)
    params = [p for _, p in win.named_params()]

    def loss():
        y = win(x)
        return ops.sum_all(ops.mul(y, y))
    return loss, [x] + params


def _case_satab(rng):
    sat = SATAB(channels=4, heads=2, prototypes=2, sub_group=8, window=4,
                stride=2, ffn_expansion=2, rng=np.random.default_rng(7),
                dtype=np.float64)
    x = _t(rng, 4, 6, 6)
    params = [p for _, p in sat.named_params() if p.requires_grad]

    def loss():
        y = sat(x)
        return ops.sum_all(ops.mul(y, y))
    return loss, [x] + params


def _case_dswm(rng):
    dswm = DSWM(channels=4, rng=np.random.default_rng(5), dtype=np.float64)
    dswm.pred.conv3.weight.data += rng.normal(0, 0.05, dswm.pred.conv3.weight.shape)
    dswm.pred.conv3.bias.data += 0.25  # keep taps off the integer lattice
    tar = _t(rng, 1, 6, 6, lo=0.0, hi=1.0)
    ref = _t(rng, 1, 6, 6, lo=0.0, hi=1.0)
    params = [p for _, p in dswm.named_params()]

    def loss():
        y = dswm(tar, ref)
        return ops.sum_all(ops.mul(y, y))
    return loss, [tar, ref] + params


def build_tiny_model(seed: int = 0) -> SSCMModel:
    cfg = desk_config(channels=4, num_blocks=1, prototypes=2, sub_group=16,
                      window=4, window_stride=2, heads=2, ffn_expansion=2,
                      height=8, width=8)
    return SSCMModel(cfg, seed=seed, dtype=np.float64)


def _randomize_model(model: SSCMModel, rng, scale: float = 0.1) -> None:
    """Shake every trainable parameter so zero-init paths carry gradient."""
    for _, p in model.named_params():
        if p.requires_grad:
            p.data += rng.normal(0.0, scale, p.shape)
    if model.dswm.use_predictor:
        model.dswm.pred.conv3.bias.data[:] = 0.25


def _case_tiny_model(rng):
    model = build_tiny_model(seed=3)
    _randomize_model(model, np.random.default_rng(13))
    lr = _t(rng, 1, 8, 8, lo=0.0, hi=1.0, rg=False)
    ref = _t(rng, 1, 8, 8, lo=0.0, hi=1.0, rg=False)
    tgt = _t(rng, 1, 8, 8, lo=0.0, hi=1.0, rg=False)
    params = [p for _, p in model.named_params() if p.requires_grad]

    def loss():
        return l1_loss(model(lr, ref), tgt)
    return loss, params


CASES = [
    ("elementwise", _case_elementwise, 12),
    ("relu", _case_relu, 12),
    ("gelu", _case_gelu, 12),
    ("absolute", _case_absolute, 12),
    ("softmax", _case_softmax, 12),
    ("matmul", _case_matmul, 12),
    ("matmul_batched", _case_matmul_batched, 8),
    ("reshape_concat_narrow", _case_shapes, 10),
    ("gather_scatter", _case_gather_scatter, 12),
    ("conv2d_3x3", _case_conv3, 10),
    ("conv2d_1x1", _case_conv1, 10),
    ("conv2d_3x3_stride2", _case_conv3_s2, 10),
    ("bilinear_warp", _case_warp, 12),
    ("fft2_roundtrip", _case_fft, 10),
    ("rfft2_irfft2", _case_rfft_chain, 10),
    ("window_attention", _case_window_attention, 6),
    ("satab_block", _case_satab, 5),
    ("dswm", _case_dswm, 5),
    ("tiny_end_to_end", _case_tiny_model, 3),
]


def gradcheck_suite(seed: int = 0) -> GradReport:
    report = GradReport()
    for name, builder, samples in CASES:
        rng = np.random.default_rng(seed + 1000)
        loss_fn, params = builder(rng)
        worst, checked = check_gradients(loss_fn, params, rng, samples_per_param=samples)
        report.entries.append(GradEntry(name, worst, checked))
    return report
