"""Dense tensors with tape-based reverse-mode automatic differentiation.

A :class:`Tensor` wraps a contiguous float32/float64 numpy array and is
immutable once built (operations always allocate fresh outputs; only the
optimizer writes into parameter storage, between steps, via ``assign``).

A :class:`GradientTape` records executed operations in order. Because every
node's parents were recorded before it, walking the node list backwards is a
valid backpropagation order. A tape is confined to one thread and is consumed
by its first ``backward`` call.
"""

from __future__ import annotations

import threading
import weakref
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_FLOAT_TYPES = (np.float32, np.float64)

_LOCAL = threading.local()


def _stack() -> list:
    stack = getattr(_LOCAL, "tapes", None)
    if stack is None:
        stack = _LOCAL.tapes = []
    return stack


def active_tape() -> Optional["GradientTape"]:
    """The innermost open tape on this thread, or None."""
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    """Rank-N dense real array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "is_parameter", "_tape_ref")

    def __init__(self, data, trainable: bool = False, dtype=None):
        # fast path: adopt contiguous float arrays without copying (ops never
        # mutate their inputs, so sharing is safe)
        if (type(data) is np.ndarray and data.flags.c_contiguous
                and data.dtype in _FLOAT_TYPES
                and (dtype is None or data.dtype == dtype)):
            self.data = data
        else:
            arr = np.asarray(data, dtype=dtype)
            if arr.dtype not in _FLOAT_TYPES:
                arr = arr.astype(np.float64)
            self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(trainable)
        self.is_parameter = bool(trainable)
        # weak link so tape <-> tensor never forms a reference cycle
        tape = active_tape()
        self._tape_ref = None if tape is None else weakref.ref(tape)

    @property
    def tape(self) -> Optional["GradientTape"]:
        """The tape that was active when this tensor was created, if alive."""
        return None if self._tape_ref is None else self._tape_ref()

    @property
    def shape(self) -> tuple:
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
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def to_numpy(self) -> np.ndarray:
        """Copy of the underlying array."""
        return self.data.copy()

    def assign(self, values: np.ndarray) -> None:
        """Overwrite parameter storage in place (optimizer / checkpoint load)."""
        values = np.asarray(values)
        if values.shape != self.data.shape:
            raise DimensionError(
                f"assign: expected shape {self.shape}, got {values.shape}"
            )
        np.copyto(self.data, values.astype(self.data.dtype, copy=False))

    def __repr__(self) -> str:
        flag = ", param" if self.is_parameter else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # Arithmetic operators are attached by ecenet.ops at import time so the
    # operation implementations live in one module.


class TapeNode:
    __slots__ = ("out", "parents", "grad_fn", "op")

    def __init__(self, out: Tensor, parents: tuple, grad_fn: Callable, op: str):
        self.out = out
        self.parents = parents
        self.grad_fn = grad_fn
        self.op = op


class GradientTape:
    """Ordered operation record; reverse traversal backpropagates."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.parameters: list[Tensor] = []
        self._param_ids: set[int] = set()
        self._consumed = False

    # -- context management -------------------------------------------------
    def __enter__(self) -> "GradientTape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _stack().pop()
        if popped is not self:
            raise ContractError("GradientTape context exited out of order")

    # -- recording -----------------------------------------------------------
    def watch(self, t: Tensor) -> None:
        if t.is_parameter and id(t) not in self._param_ids:
            self._param_ids.add(id(t))
            self.parameters.append(t)

    def record(self, out: Tensor, parents: Sequence[Tensor], grad_fn: Callable,
               op: str = "") -> None:
        for p in parents:
            if p.is_parameter:
                self.watch(p)
        self.nodes.append(TapeNode(out, tuple(parents), grad_fn, op))

    # -- differentiation -----------------------------------------------------
    def backward(self, loss: Tensor) -> dict:
        """Gradients of a scalar loss for every watched parameter.

        Returns a dict keyed by parameter Tensor (identity), with a zero array
        for parameters the loss does not reach. Consumes the tape.
        """
        if self._consumed:
            raise ContractError("GradientTape already consumed by backward()")
        if loss.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {loss.shape}"
            )
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.grad_fn(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                held = grads.get(id(parent))
                if held is None:
                    grads[id(parent)] = pg
                else:
                    grads[id(parent)] = held + pg

        result = {
            p: grads.get(id(p), np.zeros_like(p.data)) for p in self.parameters
        }
        self.nodes.clear()  # release activations promptly
        return result

    # -- diagnostics -----------------------------------------------------------
    def first_nonfinite(self) -> Optional[str]:
        """Name of the earliest recorded op whose output is non-finite."""
        for node in self.nodes:
            if not np.all(np.isfinite(node.out.data)):
                return node.op
        return None


def backward(loss: Tensor) -> dict:
    """Backpropagate through the tape that recorded ``loss``."""
    if loss.tape is None:
        raise ContractError("loss was not computed under a GradientTape")
    return loss.tape.backward(loss)


def parameters_of(obj, prefix: str = "") -> Iterable[tuple[str, Tensor]]:
    """Yield (name, tensor) for every parameter in a dataclass tree.

    Walks dataclass fields, lists and tuples; yields Tensors that were created
    trainable. Order is deterministic (field declaration order) and shared
    sub-structures are yielded once, under their first name.
    """
    yield from _walk_parameters(obj, prefix, set())


def _walk_parameters(obj, prefix: str, seen: set):
    import dataclasses

    if obj is None or id(obj) in seen:
        return
    if isinstance(obj, Tensor):
        if obj.is_parameter:
            seen.add(id(obj))
            yield prefix, obj
        return
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        seen.add(id(obj))
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from _walk_parameters(getattr(obj, f.name), name, seen)
        return
    if isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            name = f"{prefix}.{i}" if prefix else str(i)
            yield from _walk_parameters(item, name, seen)
        return
