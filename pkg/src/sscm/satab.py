"""Semantic-aware token aggregation: prototype-clustered attention.

Pixels become tokens; each token is assigned to its most-similar
learnable prototype by cosine argmax (hard assignment, so no gradient
flows through it and prototypes learn purely via EMA). Same-prototype
tokens are packed into fixed-size sub-groups for masked self-attention,
every token cross-attends to the K prototypes, the two attention maps
are fused back onto the feature grid with a residual, then overlapping
window attention and a convolutional FFN close the block.

Sub-groups are built by a stable sort on (group id, token index) chunked
into blocks of g; the final partial block is padded with masked slots.
Sub-groups may straddle two prototype groups at chunk boundaries when
group sizes are not multiples of g; that is an accepted consequence of
the equal-size layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backend, ops
from .errors import ConfigError, ContractError
from .nn import Conv2d, Linear, Module
from .tensor import Tensor, active_tape

MASK_OFF = -1e9


def tokenize(f: Tensor) -> Tensor:
    """(C,H,W) -> (H*W, C); row i holds pixel (i div W, i mod W)."""
    c = f.shape[0]
    return ops.transpose(ops.reshape(f, (c, f.shape[1] * f.shape[2])), (1, 0))


def detokenize(t: Tensor, h: int, w: int) -> Tensor:
    """(H*W, C) -> (C,H,W); exact inverse of tokenize."""
    return ops.reshape(ops.transpose(t, (1, 0)), (t.shape[1], h, w))


class TokenCenters(Module):
    """K unit-norm prototype vectors with EMA state and usage tallies."""

    def __init__(self, k: int, channels: int, rng: np.random.Generator,
                 dtype=np.float32, ema_decay: float = 0.99):
        super().__init__()
        if k < 1:
            raise ConfigError(f"prototypes must be >= 1, got {k}")
        v = rng.standard_normal((k, channels)).astype(dtype)
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        self.protos = Tensor(v, requires_grad=False)
        self.register_buffer("counts", np.zeros(k, dtype=np.float64))
        self.ema_decay = float(ema_decay)


@dataclass
class GroupAssignment:
    group_id: np.ndarray   # (N,) int64 in [0, K)
    similarity: np.ndarray  # (N,) cosine score of the chosen prototype


def assign_groups(tokens: np.ndarray, protos: np.ndarray) -> GroupAssignment:
    """Cosine-argmax assignment; ties to the lowest index, zero rows to 0."""
    norms = np.linalg.norm(tokens, axis=1, keepdims=True)
    sims = (tokens / np.maximum(norms, 1e-30)) @ protos.T
    gid = np.argmax(sims, axis=1)
    return GroupAssignment(gid.astype(np.int64), sims[np.arange(len(gid)), gid])


def ema_update(centers: TokenCenters, tokens: np.ndarray, assignment: GroupAssignment) -> None:
    """Pull each used prototype toward its assigned-token mean, renormalized.

    Runs strictly outside the autodiff tape; empty groups stay bitwise
    untouched, and decay 1.0 leaves every center bitwise unchanged.
    """
    if active_tape() is not None:
        raise ContractError("ema_update must run outside the gradient tape")
    k = centers.protos.shape[0]
    cnt = np.bincount(assignment.group_id, minlength=k).astype(np.float64)
    centers.counts += cnt
    decay = centers.ema_decay
    if decay == 1.0:
        return
    sums = backend.scatter_add_rows(tokens, assignment.group_id, k)
    nz = cnt > 0
    means = sums[nz] / cnt[nz, None].astype(tokens.dtype)
    mixed = decay * centers.protos.data[nz] + (1.0 - decay) * means
    mixed /= np.maximum(np.linalg.norm(mixed, axis=1, keepdims=True), 1e-12)
    centers.protos.data[nz] = mixed


@dataclass
class SubGroupPartition:
    order: np.ndarray  # (nsub*g,) slot -> token index; padded slots read token 0
    valid: np.ndarray  # (nsub*g,) bool, False on padded slots
    inv: np.ndarray    # (N,) token -> its slot (always a valid slot)
    nsub: int
    g: int


def partition_subgroups(assignment: GroupAssignment, g: int) -> SubGroupPartition:
    """Stable sort by (group, index), chunked into blocks of g with padding."""
    if g < 1:
        raise ConfigError(f"sub-group size must be >= 1, got {g}")
    gid = assignment.group_id
    n = gid.shape[0]
    order_real = np.argsort(gid, kind="stable").astype(np.int64)
    pad = (-n) % g
    order = np.concatenate([order_real, np.zeros(pad, dtype=np.int64)])
    valid = np.ones(n + pad, dtype=bool)
    valid[n:] = False
    inv = np.empty(n, dtype=np.int64)
    inv[order_real] = np.arange(n)
    return SubGroupPartition(order, valid, inv, (n + pad) // g, g)


class AttnProj(Module):
    """Q/K/V/output projection weights of one multi-head attention."""

    def __init__(self, channels: int, rng, dtype):
        super().__init__()
        self.wq = Linear(channels, channels, rng, dtype)
        self.wk = Linear(channels, channels, rng, dtype)
        self.wv = Linear(channels, channels, rng, dtype)
        self.wo = Linear(channels, channels, rng, dtype)


def _split_heads(t: Tensor, heads: int) -> Tensor:
    """(M, C) -> (heads, M, C/heads)."""
    m, c = t.shape
    return ops.transpose(ops.reshape(t, (m, heads, c // heads)), (1, 0, 2))


def _merge_heads(t: Tensor) -> Tensor:
    """(heads, M, dh) -> (M, C)."""
    h, m, dh = t.shape
    return ops.reshape(ops.transpose(t, (1, 0, 2)), (m, h * dh))


def intra_group_attention(tokens: Tensor, part: SubGroupPartition, proj: AttnProj,
                          heads: int, mask_add: np.ndarray) -> Tensor:
    """Masked MHSA within each sub-group, scattered back to token order."""
    n, c = tokens.shape
    dh = c // heads
    q, k, v = proj.wq(tokens), proj.wk(tokens), proj.wv(tokens)

    def arrange(t):
        t = ops.gather_rows(t, part.order)
        t = ops.reshape(t, (part.nsub, part.g, heads, dh))
        return ops.transpose(t, (0, 2, 1, 3))

    qg, kg, vg = arrange(q), arrange(k), arrange(v)
    s = ops.scale(ops.matmul(qg, ops.transpose(kg, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    a = ops.softmax(ops.add_const(s, mask_add), axis=-1)
    o = ops.matmul(a, vg)
    o = ops.reshape(ops.transpose(o, (0, 2, 1, 3)), (part.nsub * part.g, c))
    return proj.wo(ops.gather_rows(o, part.inv))


def cross_attention(tokens: Tensor, protos: Tensor, proj: AttnProj, heads: int) -> Tensor:
    """Every token queries the K prototypes (keys and values)."""
    n, c = tokens.shape
    dh = c // heads
    q = _split_heads(proj.wq(tokens), heads)
    k = _split_heads(proj.wk(protos), heads)
    v = _split_heads(proj.wv(protos), heads)
    s = ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    o = ops.matmul(ops.softmax(s, axis=-1), v)
    return proj.wo(_merge_heads(o))


def window_starts(extent: int, p: int, stride: int) -> list[int]:
    """Window origins covering every pixel; the last one clamps to the edge."""
    starts = list(range(0, extent - p + 1, stride))
    if starts[-1] != extent - p:
        starts.append(extent - p)
    return starts


class WindowAttention(Module):
    """MHSA over overlapping p x p patches, overlaps averaged by coverage."""

    def __init__(self, channels: int, heads: int, window: int, stride: int, rng, dtype):
        super().__init__()
        if not 1 <= stride <= window:
            raise ConfigError(f"window stride {stride} outside [1, {window}]")
        self.heads = heads
        self.window = window
        self.stride = stride
        self.wq = Linear(channels, channels, rng, dtype)
        self.wk = Linear(channels, channels, rng, dtype)
        self.wv = Linear(channels, channels, rng, dtype)
        self.wo = Linear(channels, channels, rng, dtype)
        self._plans: dict[tuple[int, int], tuple[np.ndarray, np.ndarray, int]] = {}

    def _plan(self, h: int, w: int):
        key = (h, w)
        if key not in self._plans:
            p = self.window
            rows = np.arange(p)
            blocks = []
            for sy in window_starts(h, p, self.stride):
                for sx in window_starts(w, p, self.stride):
                    blocks.append(((rows + sy)[:, None] * w + (rows + sx)[None, :]).ravel())
            idx = np.concatenate(blocks).astype(np.int64)
            coverage = np.bincount(idx, minlength=h * w).astype(np.float64)
            self._plans[key] = (idx, (1.0 / coverage)[:, None], len(blocks))
        return self._plans[key]

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        c, h, w = x.shape
        p = self.window
        if p > h or p > w:
            raise ConfigError(f"window {p} exceeds grid {h}x{w}")
        idx, recip, nwin = self._plan(h, w)
        dh = c // self.heads
        tokens = tokenize(x)
        q, k, v = self.wq(tokens), self.wk(tokens), self.wv(tokens)

        def arrange(t):
            t = ops.gather_rows(t, idx)
            t = ops.reshape(t, (nwin, p * p, self.heads, dh))
            return ops.transpose(t, (0, 2, 1, 3))

        qw, kw, vw = arrange(q), arrange(k), arrange(v)
        s = ops.scale(ops.matmul(qw, ops.transpose(kw, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        o = ops.matmul(ops.softmax(s, axis=-1), vw)
        o = ops.reshape(ops.transpose(o, (0, 2, 1, 3)), (nwin * p * p, c))
        acc = ops.scatter_add(o, idx, h * w)
        avg = ops.mul_const(acc, recip.astype(x.dtype))
        return detokenize(self.wo(avg), h, w)


class FFN(Module):
    """Two 1x1 convs with GELU between, residually added to the input."""

    def __init__(self, channels: int, expansion: int, rng, dtype):
        super().__init__()
        self.conv1 = Conv2d(channels, channels * expansion, 1, rng, dtype=dtype)
        self.conv2 = Conv2d(channels * expansion, channels, 1, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add(x, self.conv2(ops.gelu(self.conv1(x))))


class SATAB(Module):
    """Full aggregation block; EMA stats are stashed during training and
    applied later by the trainer via :meth:`apply_pending_ema`."""

    def __init__(self, channels: int, heads: int, prototypes: int, sub_group: int,
                 window: int, stride: int, ffn_expansion: int, rng,
                 dtype=np.float32, ema_decay: float = 0.99):
        super().__init__()
        self.heads = heads
        self.g = sub_group
        self.centers = TokenCenters(prototypes, channels, rng, dtype, ema_decay)
        self.intra = AttnProj(channels, rng, dtype)
        self.cross = AttnProj(channels, rng, dtype)
        self.fuse = Conv2d(2 * channels, channels, 1, rng, dtype=dtype)
        self.window = WindowAttention(channels, heads, window, stride, rng, dtype)
        self.ffn = FFN(channels, ffn_expansion, rng, dtype)
        self._masks: dict[tuple[int, str], np.ndarray] = {}
        self._pending: tuple[np.ndarray, GroupAssignment] | None = None
        self.last_assignment: np.ndarray | None = None

    def _mask(self, n: int, dtype) -> np.ndarray:
        key = (n, np.dtype(dtype).str)
        if key not in self._masks:
            pad = (-n) % self.g
            nsub = (n + pad) // self.g
            m = np.zeros((nsub, 1, 1, self.g), dtype=dtype)
            if pad:
                m[-1, :, :, self.g - pad:] = MASK_OFF
            self._masks[key] = m
        return self._masks[key]

    def __call__(self, f_in: Tensor, train: bool = False) -> Tensor:
        c, h, w = f_in.shape
        tokens = tokenize(f_in)
        assignment = assign_groups(tokens.data, self.centers.protos.data)
        self.last_assignment = assignment.group_id.reshape(h, w)
        if train:
            self._pending = (tokens.data, assignment)
        part = partition_subgroups(assignment, self.g)
        y_sa = intra_group_attention(tokens, part, self.intra, self.heads,
                                     self._mask(tokens.shape[0], f_in.dtype))
        y_ca = cross_attention(tokens, self.centers.protos, self.cross, self.heads)
        cat = ops.concat((detokenize(y_sa, h, w), detokenize(y_ca, h, w)), axis=0)
        f_a = ops.add(self.fuse(cat), f_in)
        return self.ffn(self.window(f_a))

    def apply_pending_ema(self) -> None:
        if self._pending is not None:
            tokens, assignment = self._pending
            self._pending = None
            ema_update(self.centers, tokens, assignment)
