"""Reverse-mode automatic differentiation over dense float64 tensors.

A ``Tensor`` wraps a row-major (C-contiguous) numpy array. Operations record
themselves onto the innermost active ``Tape``; tapes live on a thread-local
stack, so code running inside a ``with Tape() as tape:`` block is
differentiable and the same code outside any tape is a plain forward pass.
Each worker thread gets its own tape stack, which is what lets independent
training runs share nothing while running concurrently.

Broadcasting is deliberately narrow: for binary add/multiply the second
operand must broadcast to the first operand's shape (numpy right-aligned
rule), and the output always has the first operand's shape. That covers bias
rows, bias columns, and scalars without a general broadcasting engine.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "Tensor",
    "Tape",
    "backward",
    "matmul",
    "concat",
    "add",
    "mul",
    "scale",
    "sigmoid",
    "tanh",
    "relu",
    "identity",
    "elementwise",
    "slice_axis",
    "gather_rows",
    "reshape",
    "swap01",
    "flip_rows",
    "sum_all",
    "softmax_xent",
    "sigmoid_xent",
    "AdamState",
    "adam_step",
    "zero_grad",
    "finite_difference",
    "max_rel_error",
    "gradcheck",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class Tensor:
    """Dense n-dimensional float64 array with an optional gradient slot.

    ``data`` is always float64 and C-contiguous, so ``values`` (a flat view)
    walks the elements in row-major order. ``shape`` is fixed at
    construction; reshaping produces a new tensor. ``grad``, when present,
    matches ``data``'s shape. Values may be mutated in place (the optimizer
    does), the shape may not.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        if any(d <= 0 for d in arr.shape):
            raise DimensionError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the stored values."""
        return self.data.ravel()

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.data.shape)
        else:
            self.grad += g.reshape(self.data.shape)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


class _Node:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output, inputs, backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


class _TapeStack(threading.local):
    def __init__(self):
        self.stack: list[Tape] = []


_tapes = _TapeStack()


class Tape:
    """Ordered record of operations; replaying it in reverse accumulates gradients.

    After :func:`backward` runs, ``adjoint(t)`` returns d(loss)/d(t) for any
    tensor that appeared on the tape (not just parameters), which the tests
    use to inspect gradients of intermediate results.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._output_ids: set[int] = set()
        self._adjoints: dict[int, np.ndarray] | None = None

    def __enter__(self) -> "Tape":
        _tapes.stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tapes.stack.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise RuntimeError("tape stack corrupted: exited a tape that was not innermost")
        return False

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable) -> None:
        self.nodes.append(_Node(output, tuple(inputs), backward_fn))
        self._output_ids.add(id(output))

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._output_ids

    def adjoint(self, t: Tensor) -> np.ndarray | None:
        if self._adjoints is None:
            raise RuntimeError("adjoint() is only available after backward() ran on this tape")
        return self._adjoints.get(id(t))


def _active_tape() -> Tape | None:
    stack = _tapes.stack
    return stack[-1] if stack else None


def _record(output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    tape = _active_tape()
    if tape is not None:
        tape.record(output, inputs, backward_fn)
    return output


def _shape_of(x) -> str:
    return "x".join(map(str, x.shape)) if x.shape else "scalar"


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# ---------------------------------------------------------------------------
# core operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard 2-D matrix product with dA = dC.B^T, dB = A^T.dC."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {_shape_of(a)} and {_shape_of(b)}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {_shape_of(a)} vs {_shape_of(b)}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _record(out, (a, b), bwd)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along ``axis``; the backward rule splits the gradient back."""
    if not parts:
        raise DimensionError("concat needs at least one part")
    ndim = parts[0].data.ndim
    if not 0 <= axis < ndim:
        raise DimensionError(f"concat axis {axis} out of range for rank-{ndim} tensors")
    for p in parts[1:]:
        if p.data.ndim != ndim:
            raise DimensionError(f"concat rank mismatch: {_shape_of(parts[0])} vs {_shape_of(p)}")
        for d in range(ndim):
            if d != axis and p.shape[d] != parts[0].shape[d]:
                raise DimensionError(
                    f"concat shapes differ off axis {axis}: {_shape_of(parts[0])} vs {_shape_of(p)}"
                )
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        grads = []
        for i in range(len(sizes)):
            sl = [slice(None)] * ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return _record(out, tuple(parts), bwd)


def _check_broadcast(a_shape, b_shape):
    if len(b_shape) > len(a_shape):
        raise DimensionError(f"operand of shape {b_shape} does not broadcast to {a_shape}")
    for da, db in zip(reversed(a_shape), reversed(b_shape)):
        if db != da and db != 1:
            raise DimensionError(f"operand of shape {b_shape} does not broadcast to {a_shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, d in enumerate(shape):
        if d == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise sum; ``b`` must broadcast to ``a``'s shape."""
    _check_broadcast(a.shape, b.shape)
    out = Tensor(a.data + b.data)
    b_shape = b.shape

    def bwd(g):
        return g, _unbroadcast(g, b_shape)

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Pointwise product; ``b`` must broadcast to ``a``'s shape."""
    _check_broadcast(a.shape, b.shape)
    out = Tensor(a.data * b.data)
    ad, bd, b_shape = a.data, b.data, b.shape

    def bwd(g):
        return g * bd, _unbroadcast(g * ad, b_shape)

    return _record(out, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s)
    return _record(out, (a,), lambda g: (g * s,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))
    return _record(out, (a,), lambda g: (g * mask,))


def identity(a: Tensor) -> Tensor:
    out = Tensor(a.data.copy())
    return _record(out, (a,), lambda g: (g,))


_ELEMENTWISE = {
    "add": (2, add),
    "multiply": (2, mul),
    "sigmoid": (1, sigmoid),
    "tanh": (1, tanh),
    "relu": (1, relu),
    "identity": (1, identity),
}


def elementwise(kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch a pointwise operation by name."""
    if kind not in _ELEMENTWISE:
        raise ValueError(f"unknown op-kind {kind!r}; expected one of {sorted(_ELEMENTWISE)}")
    arity, fn = _ELEMENTWISE[kind]
    if arity == 2:
        if b is None:
            raise ValueError(f"op-kind {kind!r} needs a second operand")
        return fn(a, b)
    if b is not None:
        raise ValueError(f"op-kind {kind!r} is unary")
    return fn(a)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis; backward zero-pads the gradient."""
    ndim = a.data.ndim
    if not 0 <= axis < ndim:
        raise DimensionError(f"slice axis {axis} out of range for shape {_shape_of(a)}")
    if not (0 <= start < stop <= a.shape[axis]):
        raise DimensionError(f"slice [{start}:{stop}] invalid for axis {axis} of shape {_shape_of(a)}")
    sl = [slice(None)] * ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = Tensor(a.data[sl].copy())
    in_shape = a.shape

    def bwd(g):
        full = np.zeros(in_shape)
        full[sl] = g
        return (full,)

    return _record(out, (a,), bwd)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row gather from a 2-D table; backward scatter-adds into the table."""
    if table.data.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2-D table, got {_shape_of(table)}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("gather_rows needs a flat id sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"row id out of range for table with {table.shape[0]} rows")
    out = Tensor(table.data[idx])
    v = table.shape

    def bwd(g):
        full = np.zeros(v)
        np.add.at(full, idx, g)
        return (full,)

    return _record(out, (table,), bwd)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise DimensionError(f"cannot reshape {_shape_of(a)} to {shape}")
    out = Tensor(a.data.reshape(shape).copy())
    in_shape = a.shape
    return _record(out, (a,), lambda g: (g.reshape(in_shape),))


def swap01(a: Tensor) -> Tensor:
    """Swap the first two axes (matrix transpose for 2-D tensors)."""
    if a.data.ndim < 2:
        raise DimensionError(f"swap01 needs rank >= 2, got {_shape_of(a)}")
    out = Tensor(np.ascontiguousarray(np.swapaxes(a.data, 0, 1)))
    return _record(out, (a,), lambda g: (np.swapaxes(g, 0, 1),))


def flip_rows(a: Tensor) -> Tensor:
    """Reverse along the first axis (time reversal for sequences)."""
    out = Tensor(np.ascontiguousarray(a.data[::-1]))
    return _record(out, (a,), lambda g: (g[::-1],))


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())
    in_shape = a.shape
    return _record(out, (a,), lambda g: (np.broadcast_to(g, in_shape).copy(),))


def softmax_xent(logits: Tensor, gold, mask) -> Tensor:
    """Mean negative log softmax probability over unmasked rows.

    Masked rows contribute zero loss and exactly zero gradient; with every
    row masked the loss is defined as 0.
    """
    if logits.data.ndim != 2:
        raise DimensionError(f"softmax_xent needs n x c logits, got {_shape_of(logits)}")
    n, c = logits.shape
    gold = np.asarray(_as_array(gold), dtype=np.int64).reshape(n)
    mask = np.asarray(_as_array(mask), dtype=bool).reshape(n)
    if mask.any():
        sel = gold[mask]
        if sel.min() < 0 or sel.max() >= c:
            raise IndexError(f"gold class index out of range [0, {c})")
    count = int(mask.sum())
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    ex = np.exp(x - m)
    z = ex.sum(axis=1, keepdims=True)
    logp = (x - m) - np.log(z)
    if count == 0:
        out = Tensor(0.0)
        return _record(out, (logits,), lambda g: (np.zeros_like(x),))
    per_row = -logp[np.arange(n), gold]
    out = Tensor(float(per_row[mask].sum() / count))
    probs = ex / z

    def bwd(g):
        d = probs.copy()
        d[np.arange(n), gold] -= 1.0
        d *= (mask[:, None] * (float(g) / count))
        return (d,)

    return _record(out, (logits,), bwd)


def sigmoid_xent(logits: Tensor, gold, mask) -> Tensor:
    """Mean binary cross-entropy over unmasked cells.

    Uses the overflow-safe form max(s,0) - s*y + log(1 + exp(-|s|)). Masked
    cells contribute zero loss and exactly zero gradient.
    """
    y = np.asarray(_as_array(gold), dtype=np.float64)
    m = np.asarray(_as_array(mask), dtype=bool)
    s = logits.data
    if y.shape != s.shape or m.shape != s.shape:
        raise DimensionError(
            f"gold/mask shapes {y.shape}/{m.shape} must match logits {_shape_of(logits)}"
        )
    if not np.isin(y[m], (0.0, 1.0)).all():
        raise ValueError("sigmoid_xent gold values must be 0 or 1")
    count = int(m.sum())
    if count == 0:
        out = Tensor(0.0)
        return _record(out, (logits,), lambda g: (np.zeros_like(s),))
    cell = np.maximum(s, 0.0) - s * y + np.log1p(np.exp(-np.abs(s)))
    out = Tensor(float(cell[m].sum() / count))
    sig = np.where(s >= 0, 1.0 / (1.0 + np.exp(-np.abs(s))), np.exp(-np.abs(s)) / (1.0 + np.exp(-np.abs(s))))

    def bwd(g):
        return ((sig - y) * m * (float(g) / count),)

    return _record(out, (logits,), bwd)


# ---------------------------------------------------------------------------
# backward pass and optimizer


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every requires_grad tensor on ``tape``."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.produced(loss):
        raise ValueError("loss was not produced on this tape")
    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    tensors: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = adj.get(id(node.output))
        if g is None:
            continue
        grads = node.backward_fn(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None:
                continue
            key = id(inp)
            tensors[key] = inp
            if key in adj:
                adj[key] = adj[key] + gi
            else:
                adj[key] = np.array(gi, dtype=np.float64, copy=True)
    for key, t in tensors.items():
        if t.requires_grad and key in adj:
            t.accumulate_grad(adj[key])
    tape._adjoints = adj


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: Sequence[Tensor]):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(
    params: Sequence[Tensor],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.0,
    beta2: float = 0.95,
    eps: float = 1e-12,
    l2: float = 0.0,
) -> None:
    """One Adam update with bias correction; l2*param joins the gradient before the moments."""
    if len(params) != len(state.m):
        raise ValueError("optimizer state does not match the parameter list")
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {p.name or _shape_of(p)} has no gradient")
    state.t += 1
    t = state.t
    for i, p in enumerate(params):
        g = p.grad + l2 * p.data if l2 else p.grad
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        m_hat = state.m[i] / (1.0 - beta1**t)
        v_hat = state.v[i] / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# gradient checking


def finite_difference(f: Callable[[], float], tensors: Sequence[Tensor], step: float = 1e-5):
    """Central finite differences of ``f()`` w.r.t. each tensor's elements."""
    grads = []
    for t in tensors:
        flat = t.data.ravel()
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f()
            flat[i] = orig - step
            lo = f()
            flat[i] = orig
            g[i] = (hi - lo) / (2.0 * step)
        grads.append(g.reshape(t.data.shape))
    return grads


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest |a - n| / max(1, |a|, |n|) over all elements."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def gradcheck(build_loss: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Compare tape gradients of ``build_loss()`` against central finite differences.

    ``build_loss`` must be deterministic and re-runnable; it is evaluated once
    under a fresh tape for the analytic gradients and repeatedly without a
    tape for the numeric ones. Returns the worst relative error over all
    parameters (a parameter missing from the tape counts as zero gradient).
    """
    zero_grad(params)
    with Tape() as tape:
        loss = build_loss()
    backward(tape, loss)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    zero_grad(params)

    def value():
        return build_loss().item()

    numeric = finite_difference(value, params, step=step)
    return max(max_rel_error(a, n) for a, n in zip(analytic, numeric))
