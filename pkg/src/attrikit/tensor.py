"""Dense float32 tensors and a tape for reverse-mode differentiation.

Operations in :mod:`attrikit.ops` append a :class:`Node` to the innermost
active :class:`Tape` whenever one of their inputs requires a gradient.
:func:`backward` walks the tape in exact reverse order and accumulates
gradients into every leaf tensor (parameters, inputs) and every tensor
flagged with ``retain_grad``.

Example::

    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.mul(x, x))
    backward(loss, tape)
    x.grad  # -> [2., 2., 2.]
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from attrikit.errors import NumericError, ShapeError

DTYPE = np.float32

_ACTIVE_TAPES: list["Tape"] = []


class Tensor:
    """A row-major float32 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "retain_grad", "name", "_produced")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.retain_grad = False
        self.name = name
        self._produced = False  # True when the output of a recorded op

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._produced

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got dims {self.dims}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(dims={self.dims}{tag}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    """One executed primitive: its inputs, its output and a gradient rule.

    ``backward_fn`` maps the gradient w.r.t. ``output`` to a tuple with one
    entry per input (``None`` for inputs that receive no gradient).
    """

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of executed primitives; usable as a context manager."""

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _ACTIVE_TAPES.pop()
        assert popped is self

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    """Wrap ``out_data`` in a tensor and log the op on the active tape if needed."""
    check_finite(out_data, op)
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._produced = True
        tape.record(Node(op, tuple(inputs), out, backward_fn))
    return out


def check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {where}")


def backward(loss: Tensor, tape: Tape, grad: Optional[np.ndarray] = None) -> None:
    """Populate ``.grad`` on leaves (and retained tensors) reachable from ``loss``.

    ``loss`` must be a scalar unless an explicit seed ``grad`` of matching
    dims is supplied. Gradients accumulate into existing buffers, so calling
    this twice without :meth:`Tensor.zero_grad` doubles them.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got dims {loss.dims}")
        seed = np.ones_like(loss.data)
    else:
        seed = np.asarray(grad, dtype=DTYPE)
        if seed.shape != loss.dims:
            raise ShapeError(f"seed gradient dims {seed.shape} != loss dims {loss.dims}")

    grads: dict[int, np.ndarray] = {id(loss): seed}
    touched: dict[int, Tensor] = {id(loss): loss}

    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        if node.output.retain_grad:
            _accumulate(node.output, g_out)
        in_grads = node.backward_fn(g_out)
        for inp, g in zip(node.inputs, in_grads):
            if g is None or not inp.requires_grad:
                continue
            if g.shape != inp.dims:
                raise ShapeError(f"{node.op} backward produced dims {g.shape} for input {inp.dims}")
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                touched[key] = inp

    for key, g in grads.items():
        t = touched[key]
        if t.is_leaf or t.retain_grad:
            check_finite(g, "backward")
            _accumulate(t, g)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = g.astype(DTYPE, copy=False)
    t.grad = g.copy() if t.grad is None else t.grad + g
