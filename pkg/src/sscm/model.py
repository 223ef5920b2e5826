"""Restoration network assembly: SFFB, stacked blocks, ablation variants.

The network maps a zero-padded LR target plus an HR reference of another
contrast to a restored target. A displacement-warping front end fuses
the two contrasts; N restoration blocks (token aggregation followed by a
spatial-frequency block, wrapped in a zero-initialized residual conv)
refine the features; a final zero-initialized conv adds the learned
correction onto the LR input. Zero-init residuals make the untrained
model the exact identity on the LR image, for every ablation variant.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from . import ops, spectral
from .backend import is_pow2
from .errors import ConfigError, ShapeError
from .nn import Conv2d, Module
from .satab import SATAB, WindowAttention
from .tensor import Tensor
from .warp import DSWM


@dataclass
class ModelConfig:
    """Architecture hyperparameters (everything the restoration net needs)."""

    channels: int = 32
    num_blocks: int = 2
    prototypes: int = 8
    sub_group: int = 64
    window: int = 8
    window_stride: int = 4
    heads: int = 4
    ffn_expansion: int = 2
    use_dswm: bool = True
    use_satab: bool = True
    use_sffb: bool = True
    height: int = 64
    width: int = 64

    def validate(self) -> "ModelConfig":
        if self.channels < 1 or self.channels % self.heads:
            raise ConfigError(
                f"channels {self.channels} must be positive and divisible by heads {self.heads}")
        if self.num_blocks < 1:
            raise ConfigError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.prototypes < 1 or self.sub_group < 1 or self.ffn_expansion < 1:
            raise ConfigError("prototypes, sub_group and ffn_expansion must be >= 1")
        if not (is_pow2(self.height) and is_pow2(self.width)):
            raise ConfigError(f"grid {self.height}x{self.width} must be powers of two")
        if not 1 <= self.window_stride <= self.window:
            raise ConfigError(f"window_stride {self.window_stride} outside [1, {self.window}]")
        if self.window > min(self.height, self.width):
            raise ConfigError(f"window {self.window} exceeds grid {self.height}x{self.width}")
        return self


def desk_config(**overrides) -> ModelConfig:
    """Small configuration sized for CPU experiments."""
    return replace(ModelConfig(), **overrides).validate()


def paper_config(**overrides) -> ModelConfig:
    """Large named preset; its parameter count is whatever the counter says,
    with no claim of matching any published total."""
    base = ModelConfig(channels=128, num_blocks=8, prototypes=32, sub_group=256,
                       window=16, window_stride=8, heads=8, height=256, width=256)
    return replace(base, **overrides).validate()


PRESETS = {"desk": desk_config, "paper": paper_config}


class SFFB(Module):
    """Spatial-frequency fusion: two parallel paths, fused and residual.

    Spatial path: two 3x3 convs with GELU between. Frequency path:
    rfft2, concat(real, imag) on channels, one linear 1x1 conv, split,
    irfft2; linear end to end so an identity conv makes the path the
    identity map. The fused sum passes a 1x1 conv and is added back.
    """

    def __init__(self, channels: int, rng, dtype):
        super().__init__()
        self.channels = channels
        self.spat1 = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.spat2 = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.freq = Conv2d(2 * channels, 2 * channels, 1, rng, dtype=dtype)
        self.fuse = Conv2d(channels, channels, 1, rng, dtype=dtype)

    def spatial_path(self, x: Tensor) -> Tensor:
        return self.spat2(ops.gelu(self.spat1(x)))

    def frequency_path(self, x: Tensor) -> Tensor:
        c, h, w = x.shape
        spec = spectral.rfft2(x)
        mixed = self.freq(ops.concat((spec.re, spec.im), axis=0))
        out = spectral.ComplexTensor(ops.narrow(mixed, 0, 0, c),
                                     ops.narrow(mixed, 0, c, c))
        return spectral.irfft2(out, w)

    def __call__(self, x: Tensor) -> Tensor:
        both = ops.add(self.spatial_path(x), self.frequency_path(x))
        return ops.add(x, self.fuse(both))


class RestorationBlock(Module):
    """f -> f + mid(sffb(satab(f))), with ablation stand-ins for both parts."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        if cfg.use_satab:
            self.satab = SATAB(cfg.channels, cfg.heads, cfg.prototypes, cfg.sub_group,
                               cfg.window, cfg.window_stride, cfg.ffn_expansion, rng, dtype)
        else:
            self.satab = WindowAttention(cfg.channels, cfg.heads, cfg.window,
                                         cfg.window_stride, rng, dtype)
        if cfg.use_sffb:
            self.sffb = SFFB(cfg.channels, rng, dtype)
        else:
            self.sffb = Conv2d(cfg.channels, cfg.channels, 3, rng, dtype=dtype)
        self.mid = Conv2d(cfg.channels, cfg.channels, 3, rng, dtype=dtype, zero_init=True)

    def __call__(self, f: Tensor, train: bool = False) -> Tensor:
        s = self.satab(f, train=train)
        return ops.add(f, self.mid(self.sffb(s)))


class SSCMModel(Module):
    """Complete restoration network over (LR target, HR reference) pairs."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.dswm = DSWM(config.channels, rng, dtype=dtype, use_predictor=config.use_dswm)
        self.blocks: list[RestorationBlock] = []
        for i in range(config.num_blocks):
            blk = RestorationBlock(config, rng, dtype)
            self.blocks.append(blk)
            self.add_module(f"block.{i}", blk)
        self.final = Conv2d(config.channels, 1, 3, rng, dtype=dtype, zero_init=True)

    def __call__(self, tar_lr: Tensor, ref_hr: Tensor, train: bool = False) -> Tensor:
        if tar_lr.shape != ref_hr.shape:
            raise ShapeError(f"image grids differ: {tar_lr.shape} vs {ref_hr.shape}")
        if tar_lr.ndim != 3 or tar_lr.shape[0] != 1:
            raise ShapeError(f"expected (1,H,W) images, got {tar_lr.shape}")
        if tar_lr.dtype != self.dtype:
            tar_lr = Tensor(tar_lr.data, dtype=self.dtype)
            ref_hr = Tensor(ref_hr.data, dtype=self.dtype)
        f = self.dswm(tar_lr, ref_hr)
        for blk in self.blocks:
            f = blk(f, train=train)
        return ops.add(tar_lr, self.final(f))

    def satab_blocks(self) -> list[SATAB]:
        return [blk.satab for blk in self.blocks if isinstance(blk.satab, SATAB)]

    def apply_ema(self) -> None:
        """Flush every block's pending prototype statistics (post-step)."""
        for sat in self.satab_blocks():
            sat.apply_pending_ema()

    def assignment_maps(self) -> list[np.ndarray | None]:
        """Per-block group-id maps from the most recent forward."""
        return [blk.satab.last_assignment if isinstance(blk.satab, SATAB) else None
                for blk in self.blocks]

    def param_breakdown(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for name, t in self.named_params():
            head = name.split(".")[0]
            if head == "block":
                head = ".".join(name.split(".")[:2])
            out[head] = out.get(head, 0) + t.size
        return out


def config_entries(config: ModelConfig) -> dict[str, np.ndarray]:
    """Scalar tensors describing the architecture, for self-describing files."""
    out = {}
    for f in fields(ModelConfig):
        v = getattr(config, f.name)
        out[f"config.{f.name}"] = np.array(float(v), dtype=np.float64)
    return out


def config_from_entries(entries: dict[str, np.ndarray]) -> ModelConfig:
    kwargs = {}
    for f in fields(ModelConfig):
        key = f"config.{f.name}"
        if key not in entries:
            raise ConfigError(f"stored model lacks '{key}'")
        raw = float(np.asarray(entries[key]).reshape(()))
        kwargs[f.name] = bool(raw) if f.type == "bool" else int(raw)
    return ModelConfig(**kwargs).validate()
