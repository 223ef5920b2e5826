"""Dense tensors with a reverse-mode automatic-differentiation tape.

Values are row-major numpy arrays in float32 (training) or float64
(oracle and gradient-check tests). Operations in :mod:`sscm.ops` append
records to the active :class:`Tape`; :meth:`Tape.backward` replays them
in reverse, accumulating gradients into every ``requires_grad`` leaf.

Tape construction and backward are single-threaded per model instance;
independent models on separate threads must each use their own tape via
the ``record()`` context.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from .errors import ContractError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_debug_checks = os.environ.get("SSCM_DEBUG", "0") not in ("0", "")


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf validation after every forward op (slow)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


class Tensor:
    """N-dimensional real array with an optional gradient slot.

    ``data`` is a contiguous numpy array; ``grad``, when present, always
    matches its shape and dtype. Tensors are treated as immutable after
    creation -- only the optimizer writes to ``data`` between steps.
    Leaves are tensors created directly; op outputs have ``is_leaf`` False
    and receive gradients only transiently during backward.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = np.ascontiguousarray(arr, dtype=np.dtype(dtype))
        elif arr.dtype not in FLOAT_DTYPES:
            arr = np.ascontiguousarray(arr, dtype=np.float32)
        else:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Internal fast constructor: no copy, no contiguity enforcement."""
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.is_leaf = True
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flags = []
        if self.requires_grad:
            flags.append("grad")
        if not self.is_leaf:
            flags.append("op")
        tag = f" [{','.join(flags)}]" if flags else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{tag})"


class OpRecord:
    """One executed primitive: inputs, outputs, and its backward rule.

    ``backward_fn`` receives one gradient array per output (zeros where an
    output did not reach the loss) and returns one gradient array or None
    per input, in input order.
    """

    __slots__ = ("name", "inputs", "outputs", "backward_fn")

    def __init__(self, name, inputs, outputs, backward_fn):
        self.name = name
        self.inputs = inputs
        self.outputs = outputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed ops; inputs always precede their op."""

    def __init__(self):
        self.records: list[OpRecord] = []

    def record(self, name, inputs, outputs, backward_fn) -> None:
        for out in outputs:
            out.is_leaf = False
        self.records.append(OpRecord(name, inputs, outputs, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every requires_grad leaf's .grad."""
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            outs = [grads.get(id(o)) for o in rec.outputs]
            if all(g is None for g in outs):
                continue
            filled = tuple(
                g if g is not None else np.zeros_like(o.data)
                for g, o in zip(outs, rec.outputs)
            )
            in_grads = rec.backward_fn(filled)
            for t, g in zip(rec.inputs, in_grads):
                if g is None or not t.requires_grad:
                    continue
                key = id(t)
                prev = grads.get(key)
                grads[key] = g if prev is None else prev + g
                if t.is_leaf:
                    leaves[key] = t
        if loss.is_leaf and loss.requires_grad:
            leaves[id(loss)] = loss
        for key, t in leaves.items():
            g = grads[key]
            t.grad = g.copy() if t.grad is None else t.grad + g


_tape_stack: list[Tape] = []


def active_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


@contextmanager
def record(tape: Tape | None = None):
    """Context under which ops append their backward rules to a tape."""
    t = tape if tape is not None else Tape()
    _tape_stack.append(t)
    try:
        yield t
    finally:
        _tape_stack.pop()


def backward(loss: Tensor, tape: Tape) -> None:
    """Propagate d(loss) through the tape into all requires_grad leaves."""
    tape.backward(loss)
