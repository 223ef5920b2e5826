"""Displacement-driven alignment of the reference contrast.

A shallow two-conv extractor per branch lifts each image to C channels;
a three-conv predictor maps the concatenated features to a dense 2-D
displacement field; the reference features are bilinearly warped by
that field and fused with the target features through a 1x1 conv.

The predictor's last conv is zero-initialized so the displacement is
exactly zero at initialization: the warp starts as the identity and
training deforms it gradually. With ``use_dswm`` off the predictor is
absent entirely and the fusion consumes the unwarped reference.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .errors import ShapeError
from .nn import Conv2d, Module
from .tensor import Tensor


class FeatureExtractor(Module):
    def __init__(self, channels: int, rng, dtype):
        super().__init__()
        self.conv1 = Conv2d(1, channels, 3, rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, rng, dtype=dtype)

    def __call__(self, img: Tensor) -> Tensor:
        return self.conv2(ops.gelu(self.conv1(img)))


class DisplacementPredictor(Module):
    """concat(f_tar, f_ref) -> (2,H,W) offsets; zero field at init."""

    def __init__(self, channels: int, rng, dtype):
        super().__init__()
        self.conv1 = Conv2d(2 * channels, channels, 3, rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.conv3 = Conv2d(channels, 2, 3, rng, dtype=dtype, zero_init=True)

    def __call__(self, f_tar: Tensor, f_ref: Tensor) -> Tensor:
        x = ops.concat((f_tar, f_ref), axis=0)
        x = ops.gelu(self.conv1(x))
        x = ops.gelu(self.conv2(x))
        return self.conv3(x)


class DSWM(Module):
    """Feature extraction, displacement prediction, warping, 1x1 fusion."""

    def __init__(self, channels: int, rng, dtype=np.float32, use_predictor: bool = True):
        super().__init__()
        self.channels = channels
        self.use_predictor = use_predictor
        self.feat_tar = FeatureExtractor(channels, rng, dtype)
        self.feat_ref = FeatureExtractor(channels, rng, dtype)
        if use_predictor:
            self.pred = DisplacementPredictor(channels, rng, dtype)
        self.fuse = Conv2d(2 * channels, channels, 1, rng, dtype=dtype)
        self.last_displacement: np.ndarray | None = None

    def __call__(self, tar: Tensor, ref: Tensor) -> Tensor:
        if tar.shape != ref.shape:
            raise ShapeError(f"image grids differ: {tar.shape} vs {ref.shape}")
        f_tar = self.feat_tar(tar)
        f_ref = self.feat_ref(ref)
        if self.use_predictor:
            disp = self.pred(f_tar, f_ref)
            f_ref = ops.bilinear_warp(f_ref, disp)
            self.last_displacement = disp.data
        else:
            self.last_displacement = None
        return self.fuse(ops.concat((f_tar, f_ref), axis=0))
