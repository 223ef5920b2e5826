"""L1 training loop: Adam, EMA prototype scheduling, checkpointing.

Determinism contract: with a fixed seed and single-threaded execution,
two runs produce bitwise-identical checkpoints and loss traces. Batch
order comes from a seeded shuffle, gradients are reduced in fixed
parameter-name order, and prototype EMA happens strictly after the
optimizer step of the same iteration, outside any gradient tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import fileio, ops
from .data import ImagePair
from .errors import ConfigError, ShapeError, TrainingError
from .model import ModelConfig, SSCMModel, config_entries, config_from_entries
from .tensor import Tensor, record


@dataclass
class TrainConfig:
    lr: float = 2e-4
    iterations: int = 2000
    batch_size: int = 1
    seed: int = 0
    ema_decay: float = 0.99
    checkpoint_every: int = 0  # 0 = final checkpoint only
    # Constant lr by default; hook point for a schedule: (step, base_lr) -> lr.
    lr_schedule: Callable[[int, float], float] | None = field(default=None, repr=False)

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigError(f"ema_decay must lie in [0,1], got {self.ema_decay}")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss: shapes {pred.shape} vs {target.shape}")
    return ops.mean_all(ops.absolute(ops.sub(pred, target)))


class Adam:
    """Standard Adam with bias correction over a fixed-order parameter dict."""

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4):
        self.params = {k: p for k, p in sorted(params.items()) if p.requires_grad}
        self.lr = lr
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, lr: float | None = None) -> None:
        if lr is None:
            lr = self.lr
        self.t += 1
        c1 = 1.0 - self.BETA1 ** self.t
        c2 = 1.0 - self.BETA2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name!r} at step {self.t}")
            m = self.m[name]
            v = self.v[name]
            m *= self.BETA1
            m += (1.0 - self.BETA1) * g
            v *= self.BETA2
            v += (1.0 - self.BETA2) * (g * g)
            mh = m / c1
            vh = v / c2
            p.data -= (lr * mh / (np.sqrt(vh) + self.EPS)).astype(p.dtype, copy=False)

    def state_entries(self) -> dict[str, np.ndarray]:
        out = {"optim.t": np.float64(self.t) * np.ones(())}
        for name in self.params:
            out[f"optim.m.{name}"] = self.m[name]
            out[f"optim.v.{name}"] = self.v[name]
        return out

    def load_state(self, entries: dict[str, np.ndarray]) -> None:
        self.t = int(entries["optim.t"].item())
        for name in self.params:
            self.m[name] = entries[f"optim.m.{name}"].astype(self.m[name].dtype).reshape(self.m[name].shape)
            self.v[name] = entries[f"optim.v.{name}"].astype(self.v[name].dtype).reshape(self.v[name].shape)


@dataclass
class TrainResult:
    trace: list[tuple[int, float]]
    final_loss: float
    checkpoint_path: str | None


def checkpoint_entries(model: SSCMModel, optim: Adam | None = None) -> dict[str, np.ndarray]:
    entries = dict(model.state_dict())
    entries.update(config_entries(model.config))
    if optim is not None:
        entries.update(optim.state_entries())
    return entries


def load_model_checkpoint(path, dtype=np.float32) -> tuple[SSCMModel, dict[str, np.ndarray]]:
    """Rebuild a model from a checkpoint; returns (model, raw entries)."""
    entries = fileio.load_checkpoint(path)
    cfg = config_from_entries({k: v for k, v in entries.items() if k.startswith("config.")})
    model = SSCMModel(cfg, seed=0, dtype=dtype)
    state = {k: v for k, v in entries.items()
             if not k.startswith("config.") and not k.startswith("optim.")}
    model.load_state_dict(state)
    return model, entries


def train(model: SSCMModel, pairs: Sequence[ImagePair], config: TrainConfig,
          checkpoint_path=None, loss_csv_path=None) -> TrainResult:
    config.validate()
    if not pairs:
        raise ConfigError("train: dataset is empty")
    for sat in model.satab_blocks():
        sat.centers.ema_decay = config.ema_decay

    optim = Adam(dict(model.named_params()), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    order: list[int] = []
    trace: list[tuple[int, float]] = []

    def next_index() -> int:
        nonlocal order
        if not order:
            order = list(rng.permutation(len(pairs)))
        return order.pop(0)

    model.zero_grad()
    for step in range(1, config.iterations + 1):
        with record() as tape:
            losses = []
            for _ in range(config.batch_size):
                pair = pairs[next_index()]
                pred = model(pair.tar_lr, pair.ref_hr, train=True)
                losses.append(l1_loss(pred, pair.tar_hr))
            loss = losses[0]
            for extra in losses[1:]:
                loss = ops.add(loss, extra)
            if config.batch_size > 1:
                loss = ops.scale(loss, 1.0 / config.batch_size)
            value = float(loss.item())
            if not math.isfinite(value):
                raise TrainingError(f"loss became non-finite ({value}) at iteration {step}")
            tape.backward(loss)
        lr = config.lr if config.lr_schedule is None else config.lr_schedule(step, config.lr)
        optim.step(lr)
        model.zero_grad()
        model.apply_ema()
        trace.append((step, value))
        if checkpoint_path is not None and config.checkpoint_every > 0 \
                and step % config.checkpoint_every == 0:
            fileio.save_checkpoint(checkpoint_path, checkpoint_entries(model, optim))

    if checkpoint_path is not None:
        fileio.save_checkpoint(checkpoint_path, checkpoint_entries(model, optim))
    if loss_csv_path is not None:
        fileio.write_csv(loss_csv_path, "iter,l1_loss",
                         [(i, f"{v:.8e}") for i, v in trace])
    return TrainResult(trace, trace[-1][1], str(checkpoint_path) if checkpoint_path else None)
