"""Parameter-owning module tree: registration, naming, state I/O.

Modules register parameters (Tensors), buffers (plain arrays carrying
non-learnable state), and child modules simply by attribute assignment.
Canonical names are dotted paths from the root (``dswm.fuse.weight``,
``block.0.sffb.freq.weight``); the registry covers every tensor exactly
once, which the checkpoint and the parameter counter both rely on.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .errors import ContractError, ShapeError
from .tensor import Tensor


class Module:
    """Base class; attribute assignment registers params/buffers/children."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, mod: "Module") -> None:
        """Register a child under a name unfit for attribute syntax."""
        self._children[name] = mod

    def register_buffer(self, name: str, arr: np.ndarray) -> None:
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def set_buffer(self, name: str, arr: np.ndarray) -> None:
        if name not in self._buffers:
            raise ContractError(f"unknown buffer '{name}'")
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def named_params(self, prefix: str = ""):
        for name, t in self._params.items():
            yield prefix + name, t
        for cname, child in self._children.items():
            yield from child.named_params(prefix + cname + ".")

    def named_buffers(self, prefix: str = ""):
        for name, arr in self._buffers.items():
            yield prefix + name, (self, name)
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def param_count(self) -> int:
        return sum(t.size for _, t in self.named_params())

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.named_params()}
        for name, (owner, attr) in self.named_buffers():
            out[name] = owner._buffers[attr]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        """Copy arrays into registered params/buffers by dotted name."""
        seen = set()
        for name, t in self.named_params():
            if name not in state:
                if strict:
                    raise ShapeError(f"checkpoint missing parameter '{name}'")
                continue
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise ShapeError(f"parameter '{name}': stored {arr.shape} vs model {t.shape}")
            t.data = np.ascontiguousarray(arr, dtype=t.dtype)
            seen.add(name)
        for name, (owner, attr) in self.named_buffers():
            if name in state:
                owner.set_buffer(attr, np.array(state[name], dtype=owner._buffers[attr].dtype))
                seen.add(name)
            elif strict:
                raise ShapeError(f"checkpoint missing buffer '{name}'")

    def zero_grad(self) -> None:
        for _, t in self.named_params():
            t.grad = None


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform(-limit, limit, size=shape)).astype(dtype)


class Conv2d(Module):
    """Shape-preserving 2-D convolution layer (odd kernel, same padding)."""

    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 dtype=np.float32, bias: bool = True, zero_init: bool = False):
        super().__init__()
        self.cin, self.cout, self.k = cin, cout, k
        if zero_init:
            w = np.zeros((cout, cin, k, k), dtype=dtype)
        else:
            w = glorot_uniform(rng, (cout, cin, k, k), cin * k * k, cout * k * k, dtype)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias)


class Linear(Module):
    """Bias-free projection: rows of (N, C_in) against a (C_in, C_out) matrix."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.weight = Tensor(glorot_uniform(rng, (cin, cout), cin, cout, dtype),
                             requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.matmul(x, self.weight)
