"""Dense rank-<=2 tensors with tape-based reverse-mode differentiation.

Everything is 64-bit and row-major.  Gradients are only tracked for ops
executed while a Tape is active (``with tape: ...``); outside a tape every
op is a plain numpy computation, which doubles as the detach mechanism for
adversarial training.  Replaying a tape's records in reverse order is a
valid reverse sweep because recording order is a topological order.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "Rng",
    "backward",
    "matmul",
    "transpose",
    "reshape",
    "add",
    "sub",
    "mul",
    "scale",
    "mean",
    "sum_all",
    "concat_cols",
    "concat_rows",
    "relu",
    "sigmoid",
    "softplus",
    "log",
    "clip",
    "softmax_rows",
    "block_attention",
    "im2col1d",
]


class Tensor:
    """A (rows, cols) float64 matrix plus an optional gradient buffer.

    Scalars are coerced to 1x1 and 1-d inputs to a single row.  ``grad`` is
    populated by ``backward`` and always matches ``data``'s shape.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are rank <= 2, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _result(data: np.ndarray) -> Tensor:
    # internal fast path: data is already a trusted 2-d float64 array
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = False
    t.grad = None
    return t


def _accum(t: Tensor, g: np.ndarray) -> None:
    # never mutate in place: grads may alias upstream buffers
    t.grad = g if t.grad is None else t.grad + g


class Tape:
    """Ordered record of differentiable ops, replayed in reverse by backward().

    A tape is single-owner; activate it with a ``with`` block.  ``clear()``
    drops the records and zeroes the gradient of every tensor that was
    touched, leaving parameter values intact.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable[[np.ndarray], None]]] = []
        self._out_ids: set[int] = set()
        self._prev: Tape | None = None

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], rule: Callable[[np.ndarray], None]) -> None:
        out.requires_grad = True
        self._records.append((out, inputs, rule))
        self._out_ids.add(id(out))

    def __enter__(self) -> "Tape":
        global _ACTIVE
        self._prev = _ACTIVE
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE
        _ACTIVE = self._prev
        self._prev = None

    def __len__(self) -> int:
        return len(self._records)

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._out_ids

    def clear(self) -> None:
        for out, inputs, _ in self._records:
            out.grad = None
            for t in inputs:
                t.grad = None
        self._records.clear()
        self._out_ids.clear()


_ACTIVE: Tape | None = None


def backward(loss: Tensor, tape: Tape) -> None:
    """Seed d(loss)/d(loss)=1 and sweep the tape in reverse, filling grads."""
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.produced(loss):
        raise ContractError("loss was not produced through the given tape")
    loss.grad = np.ones((1, 1))
    for out, _inputs, rule in reversed(tape._records):
        if out.grad is not None:
            rule(out.grad)


class Rng:
    """Seeded, splittable random stream.

    The state core is PCG64 (pure integer state updates), so identical seeds
    give identical draws on every platform.  ``split(label)`` derives an
    independent child stream from a keyed hash of the label; equal labels
    always give equal children.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) % (1 << 64)
        self.counter = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def split(self, label) -> "Rng":
        digest = hashlib.blake2b(
            str(label).encode("utf-8"), digest_size=8, key=self.seed.to_bytes(8, "little")
        ).digest()
        return Rng(int.from_bytes(digest, "little"))

    def normal(self, rows: int, cols: int = 1) -> np.ndarray:
        self.counter += 1
        return self._gen.standard_normal((rows, cols))

    def uniform(self, low: float, high: float, rows: int, cols: int = 1) -> np.ndarray:
        self.counter += 1
        return self._gen.uniform(low, high, (rows, cols))

    def integers(self, low: int, high: int, size: int | None = None):
        self.counter += 1
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += 1
        return self._gen.permutation(n)


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; backward accumulates dA = dC.B^T and dB = A^T.dC."""
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    out = _result(a.data @ b.data)
    tape = _ACTIVE
    if tape is not None and (a.requires_grad or b.requires_grad):

        def rule(g, a=a, b=b):
            if a.requires_grad:
                _accum(a, g @ b.data.T)
            if b.requires_grad:
                _accum(b, a.data.T @ g)

        tape.record(out, (a, b), rule)
    return out


def transpose(t: Tensor) -> Tensor:
    out = _result(t.data.T.copy())
    tape = _ACTIVE
    if tape is not None and t.requires_grad:
        tape.record(out, (t,), lambda g, t=t: _accum(t, g.T))
    return out


def reshape(t: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != t.size:
        raise ShapeError(f"reshape: cannot view {t.shape} as ({rows}, {cols})")
    out = _result(t.data.reshape(rows, cols))
    tape = _ACTIVE
    if tape is not None and t.requires_grad:
        tape.record(out, (t,), lambda g, t=t: _accum(t, g.reshape(t.data.shape)))
    return out


def _check_same_shape(opname: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{opname}: shapes disagree: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = _result(a.data + b.data)
    tape = _ACTIVE
    if tape is not None and (a.requires_grad or b.requires_grad):

        def rule(g, a=a, b=b):
            if a.requires_grad:
                _accum(a, g)
            if b.requires_grad:
                _accum(b, g)

        tape.record(out, (a, b), rule)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = _result(a.data - b.data)
    tape = _ACTIVE
    if tape is not None and (a.requires_grad or b.requires_grad):

        def rule(g, a=a, b=b):
            if a.requires_grad:
                _accum(a, g)
            if b.requires_grad:
                b.grad = -g if b.grad is None else b.grad - g

        tape.record(out, (a, b), rule)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    _check_same_shape("mul", a, b)
    out = _result(a.data * b.data)
    tape = _ACTIVE
    if tape is not None and (a.requires_grad or b.requires_grad):

        def rule(g, a=a, b=b):
            if a.requires_grad:
                _accum(a, g * b.data)
            if b.requires_grad:
                _accum(b, g * a.data)

        tape.record(out, (a, b), rule)
    return out


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _result(t.data * c)
    tape = _ACTIVE
    if tape is not None and t.requires_grad:
        tape.record(out, (t,), lambda g, t=t, c=c: _accum(t, g * c))
    return out


def mean(t: Tensor) -> Tensor:
    out = _result(np.array([[t.data.mean()]]))
    tape = _ACTIVE
    if tape is not None and t.requires_grad:
        inv = 1.0 / t.size
        tape.record(out, (t,), lambda g, t=t, inv=inv: _accum(t, np.full(t.data.shape, g[0, 0] * inv)))
    return out


def sum_all(t: Tensor) -> Tensor:
    out = _result(np.array([[t.data.sum()]]))
    tape = _ACTIVE
    if tape is not None and t.requires_grad:
        tape.record(out, (t,), lambda g, t=t: _accum(t, np.full(t.data.shape, g[0, 0])))
    return out


def concat_cols(*tensors: Tensor) -> Tensor:
    """Concatenate side by side; all operands must share their row count."""
    if not tensors:
        raise ContractError("concat_cols: no operands")
    rows = tensors[0].data.shape[0]
    for t in tensors[1:]:
        if t.data.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts disagree: {tensors[0].shape} vs {t.shape}")
    out = _result(np.concatenate([t.data for t in tensors], axis=1))
    tape = _ACTIVE
    if tape is not None and any(t.requires_grad for t in tensors):
        widths = [t.data.shape[1] for t in tensors]

        def rule(g, tensors=tensors, widths=widths):
            pos = 0
            for t, w in zip(tensors, widths):
                if t.requires_grad:
                    _accum(t, g[:, pos : pos + w])
                pos += w

        tape.record(out, tensors, rule)
    return out


def concat_rows(*tensors: Tensor) -> Tensor:
    """Stack vertically; all operands must share their column count."""
    if not tensors:
        raise ContractError("concat_rows: no operands")
    cols = tensors[0].data.shape[1]
    for t in tensors[1:]:
        if t.data.shape[1] != cols:
            raise ShapeError(f"concat_rows: column counts disagree: {tensors[0].shape} vs {t.shape}")
    out = _result(np.concatenate([t.data for t in tensors], axis=0))
    tape = _ACTIVE
    if tape is not None and any(t.requires_grad for t in tensors):
        heights = [t.data.shape[0] for t in tensors]

        def rule(g, tensors=tensors, heights=heights):
            pos = 0
            for t, h in zip(tensors, heights):
                if t.requires_grad:
                    _accum(t, g[pos : pos + h, :])
                pos += h

        tape.record(out, tensors, rule)
    return out


def relu(t: Tensor) -> Tensor:
    out = _result(np.maximum(t.data, 0.0))
    tape = _ACTIVE
    if tape is not None and t.requires_grad:
        tape.record(out, (t,), lambda g, t=t: _accum(t, g * (t.data > 0.0)))
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-softplus(-x)): stable for large |x|, no overflow warnings
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(t: Tensor) -> Tensor:
    s = _sigmoid(t.data)
    out = _result(s)
    tape = _ACTIVE
    if tape is not None and t.requires_grad:
        tape.record(out, (t,), lambda g, t=t, s=s: _accum(t, g * s * (1.0 - s)))
    return out


def softplus(t: Tensor) -> Tensor:
    """log(1 + e^x), computed stably."""
    out = _result(np.logaddexp(0.0, t.data))
    tape = _ACTIVE
    if tape is not None and t.requires_grad:
        tape.record(out, (t,), lambda g, t=t: _accum(t, g * _sigmoid(t.data)))
    return out


def log(t: Tensor) -> Tensor:
    if np.any(t.data <= 0.0):
        raise ContractError("log: non-positive entry")
    out = _result(np.log(t.data))
    tape = _ACTIVE
    if tape is not None and t.requires_grad:
        tape.record(out, (t,), lambda g, t=t: _accum(t, g / t.data))
    return out


def clip(t: Tensor, low: float, high: float) -> Tensor:
    """Clamp entries to [low, high]; gradient passes only where unclipped."""
    if not low < high:
        raise ContractError(f"clip: need low < high, got [{low}, {high}]")
    out = _result(np.clip(t.data, low, high))
    tape = _ACTIVE
    if tape is not None and t.requires_grad:

        def rule(g, t=t, low=low, high=high):
            _accum(t, g * ((t.data >= low) & (t.data <= high)))

        tape.record(out, (t,), rule)
    return out


def softmax_rows(t: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction as the overflow guard."""
    shifted = t.data - t.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = _result(s)
    tape = _ACTIVE
    if tape is not None and t.requires_grad:

        def rule(g, t=t, s=s):
            _accum(t, s * (g - (g * s).sum(axis=1, keepdims=True)))

        tape.record(out, (t,), rule)
    return out


def block_attention(q: Tensor, k: Tensor, v: Tensor, block: int, alpha: float) -> Tensor:
    """Softmax attention applied independently to consecutive row blocks.

    q, k, v share shape (count*block, width); rows [b*block, (b+1)*block)
    form one attention group: out_b = softmax(alpha * q_b k_b^T) v_b.  This
    is the fused core that lets many equal-size windows share one op instead
    of one op chain each; the batched dimension never leaves this function,
    so tensors stay rank-2 at the interface.
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"block_attention: shapes disagree: {q.shape}, {k.shape}, {v.shape}")
    rows, width = q.shape
    if block < 1 or rows % block != 0:
        raise ShapeError(f"block_attention: {rows} rows do not split into blocks of {block}")
    count = rows // block
    q3 = q.data.reshape(count, block, width)
    k3 = k.data.reshape(count, block, width)
    v3 = v.data.reshape(count, block, width)
    logits = alpha * np.matmul(q3, k3.transpose(0, 2, 1))
    logits -= logits.max(axis=2, keepdims=True)
    e = np.exp(logits)
    sm = e / e.sum(axis=2, keepdims=True)
    out = _result(np.matmul(sm, v3).reshape(rows, width))
    tape = _ACTIVE
    if tape is not None and (q.requires_grad or k.requires_grad or v.requires_grad):

        def rule(g, q=q, k=k, v=v, q3=q3, k3=k3, v3=v3, sm=sm, alpha=alpha):
            g3 = g.reshape(count, block, width)
            if v.requires_grad:
                _accum(v, np.matmul(sm.transpose(0, 2, 1), g3).reshape(rows, width))
            ds = np.matmul(g3, v3.transpose(0, 2, 1))
            dl = sm * (ds - (ds * sm).sum(axis=2, keepdims=True))
            dl *= alpha
            if q.requires_grad:
                _accum(q, np.matmul(dl, k3).reshape(rows, width))
            if k.requires_grad:
                _accum(k, np.matmul(dl.transpose(0, 2, 1), q3).reshape(rows, width))

        tape.record(out, (q, k, v), rule)
    return out


def im2col1d(t: Tensor, k: int, stride: int = 1) -> Tensor:
    """Unfold a (channels, length) signal into (channels*k, n_windows) patches.

    Column j holds the window starting at j*stride; the gather is linear, so
    backward scatter-adds the gradient back into the signal.
    """
    c, length = t.data.shape
    if k > length:
        raise ShapeError(f"im2col1d: kernel width {k} exceeds signal length {length}")
    if k < 1 or stride < 1:
        raise ContractError(f"im2col1d: need k >= 1 and stride >= 1, got k={k} stride={stride}")
    n_out = (length - k) // stride + 1
    view = np.lib.stride_tricks.sliding_window_view(t.data, k, axis=1)[:, ::stride, :]
    cols = view.transpose(0, 2, 1).reshape(c * k, n_out)
    out = _result(cols.copy())
    tape = _ACTIVE
    if tape is not None and t.requires_grad:

        def rule(g, t=t, c=c, k=k, stride=stride, n_out=n_out, length=length):
            g3 = g.reshape(c, k, n_out)
            gt = np.zeros((c, length))
            for ki in range(k):
                gt[:, ki : ki + stride * n_out : stride] += g3[:, ki, :]
            _accum(t, gt)

        tape.record(out, (t,), rule)
    return out
