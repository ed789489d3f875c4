"""Dense tensors with reverse-mode automatic differentiation on an explicit tape.

Storage is a flat row-major numpy buffer. Scalars are float32 by default and
float64 in gradient-check mode; the mode is a global run flag so every buffer
in a run (and hence every checkpoint) shares one element type.

Broadcasting is deliberately minimal: `add` and `mul` align a trailing-shape
operand (a bias or a per-feature scale) against the leading axes of the other,
and `expand_leading` stacks a tensor along a new batch axis. Nothing else
broadcasts, which keeps every adjoint a few lines of auditable numpy.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, NumericError, ShapeError, ValidationError

_FLOAT64 = False


def set_float64(enabled: bool) -> None:
    """Switch the global scalar type; affects tensors created afterwards."""
    global _FLOAT64
    _FLOAT64 = bool(enabled)


def active_dtype() -> np.dtype:
    return np.dtype(np.float64 if _FLOAT64 else np.float32)


class float64_mode:
    """Context manager: run the enclosed block in 64-bit mode."""

    def __enter__(self) -> "float64_mode":
        self._prev = _FLOAT64
        set_float64(True)
        return self

    def __exit__(self, *exc) -> bool:
        set_float64(self._prev)
        return False


class Tensor:
    """A dense array plus an optional gradient buffer.

    Tensors are immutable after construction except for `grad`; operations
    return new tensors and record their adjoints on the active tape whenever
    an input requires a gradient.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=active_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return _out(self.data, False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # operator sugar over the primitives below
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return tmean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _out(data: np.ndarray, requires_grad: bool) -> Tensor:
    """Wrap an op result without changing its dtype."""
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = requires_grad
    t.grad = None
    return t


# ---------------------------------------------------------------------------
# tape


class TapeRecord(NamedTuple):
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    adjoint: Callable[[np.ndarray], None]


_TAPE_STACK: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of executed primitives, replayed in reverse for adjoints.

    Execution order is a topological order by construction (an op's inputs
    exist before it runs), so one reverse sweep visits each record exactly
    once and applies the chain rule with plain accumulation.
    """

    def __init__(self):
        self._records: list[TapeRecord] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise ContractError("tape stack corrupted: exited a tape that is not innermost")
        return False

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> tuple[TapeRecord, ...]:
        return tuple(self._records)

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(leaf) into every recorded tensor's grad buffer.

        Leaves that do not reach the loss end with an all-zero buffer rather
        than None, so callers can treat every recorded leaf uniformly.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self._records:
            raise ContractError("backward on an empty tape")
        if not any(rec.output is loss for rec in self._records):
            raise ContractError("loss tensor was not produced on this tape")
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(self._records):
            out_grad = rec.output.grad
            if out_grad is None:
                continue  # this branch never reached the loss
            rec.adjoint(out_grad)
        for rec in self._records:
            for t in rec.inputs:
                if t.requires_grad and t.grad is None:
                    t.grad = np.zeros_like(t.data)


def record_operation(
    op: str,
    inputs: Sequence[Tensor],
    output: Tensor,
    adjoint: Callable[[np.ndarray], None],
) -> None:
    """Append a primitive to the active tape.

    All built-in ops funnel through here; it is also the extension point for
    custom primitives (the adjoint receives d(loss)/d(output) and must
    accumulate into the inputs' grads via `accumulate_grad`).
    """
    tape = _active_tape()
    if tape is not None and output.requires_grad:
        tape._records.append(TapeRecord(op, tuple(inputs), output, adjoint))


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


# ---------------------------------------------------------------------------
# broadcasting helpers (suffix alignment only)


def _suffix_of(small: tuple[int, ...], big: tuple[int, ...]) -> bool:
    return len(small) <= len(big) and big[len(big) - len(small):] == small


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over the leading axes a suffix-aligned operand was stretched over."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if _suffix_of(b.shape, a.shape) or _suffix_of(a.shape, b.shape):
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not suffix-aligned")


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    out = _out(a.data + b.data, a.requires_grad or b.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        accumulate_grad(a, _reduce_to(g, a.shape))
        accumulate_grad(b, _reduce_to(g, b.shape))

    record_operation("add", (a, b), out, adjoint)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    out = _out(a.data * b.data, a.requires_grad or b.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        accumulate_grad(a, _reduce_to(g * b.data, a.shape))
        accumulate_grad(b, _reduce_to(g * a.data, b.shape))

    record_operation("mul", (a, b), out, adjoint)
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = _out(-a.data, a.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        accumulate_grad(a, -g)

    record_operation("neg", (a,), out, adjoint)
    return out


def matmul(a, b) -> Tensor:
    """Matrix product.

    Supported forms: plain (m,k)@(k,n); stacked with identical leading axes
    (..., m, k) @ (..., k, n); and a shared rank-2 right operand
    (..., m, k) @ (k, n), whose adjoint sums over the leading axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")
    shared_rhs = b.ndim == 2 and a.ndim > 2
    if not shared_rhs and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: leading dimensions differ: {a.shape} @ {b.shape}")
    out = _out(a.data @ b.data, a.requires_grad or b.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        accumulate_grad(a, g @ bt)
        if shared_rhs:
            k, n = b.shape
            accumulate_grad(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))
        else:
            accumulate_grad(b, at @ g)

    record_operation("matmul", (a, b), out, adjoint)
    return out


def transpose(a, axes: tuple[int, ...] | None = None) -> Tensor:
    a = as_tensor(a)
    out = _out(np.transpose(a.data, axes), a.requires_grad)
    inverse = None if axes is None else tuple(np.argsort(axes))

    def adjoint(g: np.ndarray) -> None:
        accumulate_grad(a, np.transpose(g, inverse))

    record_operation("transpose", (a,), out, adjoint)
    return out


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    out = _out(a.data.reshape(shape), a.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        accumulate_grad(a, g.reshape(a.shape))

    record_operation("reshape", (a,), out, adjoint)
    return out


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of zero tensors")
    rank = parts[0].ndim
    ax = axis + rank if axis < 0 else axis
    if not 0 <= ax < rank:
        raise ShapeError(f"concat: axis {axis} out of range for rank {rank}")
    ref = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != rank or other[:ax] + other[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {parts[0].shape} and {p.shape} on axis {axis}")
    out = _out(np.concatenate([p.data for p in parts], axis=ax), any(p.requires_grad for p in parts))
    extents = [p.shape[ax] for p in parts]

    def adjoint(g: np.ndarray) -> None:
        offset = 0
        for p, n in zip(parts, extents):
            sl = [slice(None)] * rank
            sl[ax] = slice(offset, offset + n)
            accumulate_grad(p, g[tuple(sl)])
            offset += n

    record_operation("concat", tuple(parts), out, adjoint)
    return out


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    ax = axis + a.ndim if axis < 0 else axis
    if not 0 <= ax < a.ndim:
        raise ShapeError(f"slice: axis {axis} out of range for rank {a.ndim}")
    if not 0 <= start <= stop <= a.shape[ax]:
        raise ShapeError(f"slice: [{start}:{stop}] invalid for extent {a.shape[ax]} on axis {axis}")
    index = [slice(None)] * a.ndim
    index[ax] = slice(start, stop)
    index = tuple(index)
    out = _out(a.data[index], a.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        buf = np.zeros_like(a.data)
        buf[index] = g
        accumulate_grad(a, buf)

    record_operation("slice", (a,), out, adjoint)
    return out


def expand_leading(a, n: int) -> Tensor:
    """Stack `n` copies of `a` along a new leading axis; adjoint sums them."""
    a = as_tensor(a)
    out = _out(np.broadcast_to(a.data, (n,) + a.shape).copy(), a.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        accumulate_grad(a, g.sum(axis=0))

    record_operation("expand_leading", (a,), out, adjoint)
    return out


def tsum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    ax = None if axis is None else (axis + a.ndim if axis < 0 else axis)
    if ax is not None and not 0 <= ax < a.ndim:
        raise ShapeError(f"sum: axis {axis} out of range for rank {a.ndim}")
    out = _out(a.data.sum(axis=ax), a.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        if ax is None:
            accumulate_grad(a, np.broadcast_to(g, a.shape).copy())
        else:
            accumulate_grad(a, np.broadcast_to(np.expand_dims(g, ax), a.shape).copy())

    record_operation("sum", (a,), out, adjoint)
    return out


def tmean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    ax = None if axis is None else (axis + a.ndim if axis < 0 else axis)
    if ax is not None and not 0 <= ax < a.ndim:
        raise ShapeError(f"mean: axis {axis} out of range for rank {a.ndim}")
    count = a.size if ax is None else a.shape[ax]
    if count == 0:
        raise ShapeError("mean over zero elements")
    inv = 1.0 / count
    out = _out(a.data.mean(axis=ax), a.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        if ax is None:
            accumulate_grad(a, np.broadcast_to(g * inv, a.shape).copy())
        else:
            accumulate_grad(a, np.broadcast_to(np.expand_dims(g * inv, ax), a.shape).copy())

    record_operation("mean", (a,), out, adjoint)
    return out


def texp(a) -> Tensor:
    a = as_tensor(a)
    out = _out(np.exp(a.data), a.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        accumulate_grad(a, g * out.data)

    record_operation("exp", (a,), out, adjoint)
    return out


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = _out(a.data * cdf, a.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        accumulate_grad(a, g * (cdf + a.data * pdf))

    record_operation("gelu", (a,), out, adjoint)
    return out


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    ax = axis + a.ndim if axis < 0 else axis
    if not 0 <= ax < a.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for rank {a.ndim}")
    shifted = a.data - a.data.max(axis=ax, keepdims=True)  # overflow guard
    e = np.exp(shifted)
    y = e / e.sum(axis=ax, keepdims=True)
    out = _out(y, a.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        inner = (g * y).sum(axis=ax, keepdims=True)
        accumulate_grad(a, y * (g - inner))

    record_operation("softmax", (a,), out, adjoint)
    return out


LAYER_NORM_EPS = 1e-6


def layer_norm(a, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine part)."""
    a = as_tensor(a)
    if a.shape[-1] == 0:
        raise ShapeError("layer_norm over an empty axis")
    mu = a.data.mean(axis=-1, keepdims=True)
    var = ((a.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv
    out = _out(y, a.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        accumulate_grad(a, inv * (g - gm - y * gym))

    record_operation("layer_norm", (a,), out, adjoint)
    return out


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    out = _out(np.clip(a.data, lo, hi), a.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        # subgradient: pass-through on the closed interval, zero outside
        mask = (a.data >= lo) & (a.data <= hi)
        accumulate_grad(a, g * mask)

    record_operation("clamp", (a,), out, adjoint)
    return out


def embedding(table, indices) -> Tensor:
    """Row lookup `table[indices]`; the adjoint scatter-adds into the table."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("embedding indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ValidationError(f"embedding index out of range [0, {table.shape[0]})")
    out = _out(table.data[idx], table.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, g)

    record_operation("embedding", (table,), out, adjoint)
    return out


def cross_entropy_with_logits(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"cross entropy: logits {logits.shape} vs labels {labels.shape}")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValidationError(f"label out of range [0, {c})")
    m = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=1)) + m[:, 0]
    picked = logits.data[np.arange(n), labels]
    out = _out(np.asarray((lse - picked).mean(), dtype=logits.data.dtype), logits.requires_grad)

    def adjoint(g: np.ndarray) -> None:
        e = np.exp(shifted)
        p = e / e.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        accumulate_grad(logits, p * (g / n))

    record_operation("cross_entropy_with_logits", (logits,), out, adjoint)
    return out


def gaussian(shape: tuple[int, ...], rng: np.random.Generator) -> Tensor:
    """A sampled standard-normal node, constant with respect to the tape."""
    return Tensor(rng.standard_normal(shape))


def backward(loss: Tensor) -> None:
    """Backpropagate from `loss` through the innermost active tape."""
    tape = _active_tape()
    if tape is None:
        raise ContractError("backward called with no active tape")
    tape.backward(loss)
