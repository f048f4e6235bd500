"""Tape-based reverse-mode differentiation over numpy arrays.

Operations record themselves on the innermost active :class:`Tape`; outside
a tape they only compute values, which is what evaluation passes use.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class NumericError(FloatingPointError):
    """A non-finite value appeared in a forward or backward pass."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, copy=True), requires_grad=True, name=name)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence]


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations.

    Recording order is a valid topological order, so backward simply walks
    the record in reverse.  Leaf tensors that require gradients and feed a
    recorded op are collected in ``params``.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.params: dict[int, Tensor] = {}
        self._produced: set[int] = set()

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def record(self, out: Tensor, inputs: tuple, backward):
        for t in inputs:
            if isinstance(t, Tensor) and t.requires_grad and id(t) not in self._produced:
                self.params.setdefault(id(t), t)
        self._produced.add(id(out))
        self.records.append(_Record(out, inputs, backward))

    def backward(self, loss: Tensor):
        if loss.data.size != 1:
            raise ValueError("backward needs a scalar loss")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if not np.all(np.isfinite(gi)):
                    raise NumericError("non-finite gradient in backward pass")
                key = id(t)
                if key in self.params:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
                elif key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return list(self.params.values())


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def make_op(out_data: np.ndarray, inputs: tuple, backward) -> Tensor:
    """Wrap an op result, recording it when a tape is active and any input needs grad."""
    if not np.all(np.isfinite(out_data)):
        raise NumericError("non-finite value in forward pass")
    tape = active_tape()
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs and tape is not None)
    if out.requires_grad:
        tape.record(out, inputs, backward)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
