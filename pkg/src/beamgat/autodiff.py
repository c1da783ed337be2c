"""Dense float64 tensors with a tape-based reverse-mode differentiator.

Only the handful of operations needed by the graph attention model are
provided.  Tensors are immutable; gradients are tracked only for tensors
registered with an active :class:`Tape` (``tape.watch``) and for results
computed from them while that tape is active.

Example
-------
>>> with Tape() as tape:
...     x = tape.watch(Tensor([1.0, 2.0, 3.0]))
...     loss = (x * x).sum() * 0.5
...     grads = tape.backward(loss)
>>> grads[x.node_id].values
array([1., 2., 3.])
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor",
    "Tape",
    "TapeError",
    "active_tape",
    "backward",
    "matmul",
    "leaky_relu",
    "elu",
    "segment_softmax",
    "segment_weighted_sum",
    "concat_columns",
    "split_columns",
    "block_diagonal",
    "apply_dropout",
    "segment_ids",
]

DEFAULT_SLOPE = 0.2


class TapeError(RuntimeError):
    """Raised for misuse of the differentiation tape."""


_node_counter = itertools.count()
_tape_stack: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _tape_stack[-1] if _tape_stack else None


class Tensor:
    """Immutable row-major float64 array, optionally tracked on a tape."""

    __slots__ = ("values", "node_id")

    def __init__(self, values, node_id: int | None = None):
        arr = np.array(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        arr.setflags(write=False)
        self.values = arr
        self.node_id = node_id

    @classmethod
    def _wrap(cls, arr: np.ndarray, node_id: int | None = None) -> "Tensor":
        # internal results skip the copy and the finiteness scan
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        t.values = arr
        t.node_id = node_id
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() needs a single element, shape is {self.shape}")
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = "" if self.node_id is None else f", node_id={self.node_id}"
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_sum(self) * (1.0 / max(self.size, 1))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class Record:
    kind: str
    inputs: tuple[int | None, ...]
    output: int
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Append-only record of tracked operations.

    Use as a context manager; operations on watched tensors are recorded
    while the tape is active.  :meth:`backward` consumes the records.
    """

    def __init__(self):
        self.records: list[Record] = []
        self._watched: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.remove(self)

    def watch(self, t: Tensor | np.ndarray) -> Tensor:
        """Return a tracked view of ``t`` with a fresh node id."""
        values = t.values if isinstance(t, Tensor) else Tensor(t).values
        node = next(_node_counter)
        self._watched.add(node)
        return Tensor._wrap(values, node)

    def backward(self, loss: Tensor) -> dict[int, Tensor]:
        """Reverse-accumulate gradients of scalar ``loss``; clears the tape."""
        if loss.node_id is None:
            raise TapeError("backward called on an untracked tensor")
        if loss.size != 1:
            raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
        known = self._watched | {r.output for r in self.records}
        if loss.node_id not in known:
            raise TapeError("loss was not produced on this tape")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
        for rec in reversed(self.records):
            g = grads.get(rec.output)
            if g is None:
                continue
            for node, gi in zip(rec.inputs, rec.backward(g)):
                if node is None or gi is None:
                    continue
                if node in grads:
                    grads[node] = grads[node] + gi
                else:
                    grads[node] = gi
        self.records.clear()
        self._watched.clear()
        return {k: Tensor._wrap(v) for k, v in grads.items()}


def backward(loss: Tensor) -> dict[int, Tensor]:
    """Differentiate ``loss`` on the currently active tape."""
    tape = active_tape()
    if tape is None:
        raise TapeError("no active tape")
    return tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(kind: str, inputs: Sequence[Tensor], out: np.ndarray, grad_fn) -> Tensor:
    tape = active_tape()
    if tape is None or all(t.node_id is None for t in inputs):
        return Tensor._wrap(out)
    node = next(_node_counter)
    tape.records.append(Record(kind, tuple(t.node_id for t in inputs), node, grad_fn))
    return Tensor._wrap(out, node)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.values + b.values,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit("sub", (a, b), a.values - b.values,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    return _emit("mul", (a, b), av * bv,
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit("sum", (a,), np.array(a.values.sum()),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _emit("reshape", (a,), a.values.reshape(shape), lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ValueError("transpose expects a matrix")
    return _emit("transpose", (a,), a.values.T.copy(), lambda g: (g.T.copy(),))


def take(a: Tensor, index) -> Tensor:
    """Indexing along the leading axes; duplicates accumulate on backward."""
    shape = a.shape

    def grad_fn(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _emit("take", (a,), a.values[index], grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an ``m x n`` and an ``n x p`` tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values
    return _emit("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def leaky_relu(x: Tensor, slope: float = DEFAULT_SLOPE) -> Tensor:
    """``max(x, slope*x)``; the derivative at exactly 0 is taken as ``slope``."""
    if not 0.0 < slope < 1.0:
        raise ValueError("slope must lie in (0, 1)")
    x = _as_tensor(x)
    xv = x.values
    pos = xv > 0
    d = np.where(pos, 1.0, slope)
    return _emit("leaky_relu", (x,), np.where(pos, xv, slope * xv), lambda g: (g * d,))


def elu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    xv = x.values
    # expm1(min(x, 0)) is exactly 0 for x >= 0, so e + 1 is the derivative everywhere
    e = np.expm1(np.minimum(xv, 0.0))
    return _emit("elu", (x,), np.where(xv < 0, e, xv), lambda g: (g * (e + 1.0),))


# ---------------------------------------------------------------------------
# segment ops over CSR offsets


def _check_offsets(offsets, n_edges: int) -> np.ndarray:
    offsets = np.asarray(offsets, dtype=np.int64)
    if offsets.ndim != 1 or offsets.size < 1 or offsets[0] != 0 or offsets[-1] != n_edges:
        raise ValueError("offsets must start at 0 and end at the edge count")
    if np.any(np.diff(offsets) < 0):
        raise ValueError("offsets must be non-decreasing")
    return offsets


def segment_ids(offsets) -> np.ndarray:
    """Segment index of every edge, e.g. ``[0, 2, 3] -> [0, 0, 1]``."""
    offsets = np.asarray(offsets, dtype=np.int64)
    return np.repeat(np.arange(offsets.size - 1), np.diff(offsets))


def segment_softmax(scores: Tensor, offsets) -> Tensor:
    """Softmax of ``scores`` (shape ``(E,)`` or ``(E, K)``) within each segment.

    Every segment must hold at least one edge.
    """
    scores = _as_tensor(scores)
    offsets = _check_offsets(offsets, scores.shape[0])
    if np.any(np.diff(offsets) == 0):
        raise ValueError("empty softmax segment; add self-loops to the graph")
    starts = offsets[:-1]
    seg = segment_ids(offsets)
    sv = scores.values
    shifted = sv - np.maximum.reduceat(sv, starts, axis=0)[seg]
    ex = np.exp(shifted)
    alpha = ex / np.add.reduceat(ex, starts, axis=0)[seg]

    def grad_fn(g):
        inner = np.add.reduceat(alpha * g, starts, axis=0)[seg]
        return (alpha * (g - inner),)

    return _emit("segment_softmax", (scores,), alpha, grad_fn)


def segment_weighted_sum(alpha: Tensor, messages: Tensor, offsets,
                         sources=None) -> Tensor:
    """Row ``i`` of the result is ``sum(alpha[e] * messages[e])`` over segment ``i``.

    ``alpha`` may be ``(E,)`` or ``(E, K)``; in the second form ``messages``
    has ``K`` equal column blocks and block ``k`` is weighted by
    ``alpha[:, k]`` (one block per attention head).  When ``sources`` is
    given, ``messages`` holds one row per *node* and edge ``e`` reads row
    ``sources[e]``, which avoids materialising per-edge messages.
    """
    alpha, messages = _as_tensor(alpha), _as_tensor(messages)
    if alpha.ndim not in (1, 2) or messages.ndim != 2:
        raise ValueError("alpha must be (E,) or (E, K) and messages 2-D")
    n_edges = alpha.shape[0]
    heads = 1 if alpha.ndim == 1 else alpha.shape[1]
    if messages.shape[1] % heads:
        raise ValueError(f"{messages.shape[1]} message columns do not split into {heads} heads")
    offsets = _check_offsets(offsets, n_edges)
    n_out = offsets.size - 1
    if sources is None:
        if messages.shape[0] != n_edges:
            raise ValueError(f"alpha has {n_edges} edges but messages has {messages.shape[0]} rows")
        cols = np.arange(n_edges)
    else:
        cols = np.asarray(sources, dtype=np.int64)
        if cols.shape != (n_edges,):
            raise ValueError("sources must have one entry per edge")
    av, mv = alpha.values.reshape(n_edges, heads), messages.values
    width = mv.shape[1] // heads
    blocks = [slice(k * width, (k + 1) * width) for k in range(heads)]
    mats = [sp.csr_matrix((av[:, k], cols, offsets), shape=(n_out, mv.shape[0]))
            for k in range(heads)]
    out = np.empty((n_out, mv.shape[1]))
    for mat, b in zip(mats, blocks):
        out[:, b] = mat @ mv[:, b]
    seg = segment_ids(offsets)
    deg = np.diff(offsets)
    uniform = n_out > 0 and np.all(deg == deg[0])

    def grad_fn(g):
        gathered = np.take(mv, cols, axis=0)
        if uniform:
            # equal-degree segments: batch the per-edge dot products as a matmul
            d = int(deg[0])
            m4 = gathered.reshape(n_out, d, heads, width).transpose(0, 2, 1, 3)
            g_alpha = np.matmul(m4, g.reshape(n_out, heads, width, 1))[..., 0]
            g_alpha = g_alpha.transpose(0, 2, 1).reshape(n_edges, heads)
        else:
            g_alpha = (g[seg] * gathered).reshape(n_edges, heads, width).sum(axis=2)
        g_alpha = g_alpha.reshape(alpha.shape)
        g_msg = np.empty_like(mv)
        for mat, b in zip(mats, blocks):
            g_msg[:, b] = mat.T @ g[:, b]
        return (g_alpha, g_msg)

    return _emit("segment_weighted_sum", (alpha, messages), out, grad_fn)


def block_diagonal(vectors: Sequence[Tensor]) -> Tensor:
    """Stack ``K`` length-``F`` vectors into a ``(K*F) x K`` block-diagonal matrix."""
    vectors = [_as_tensor(v) for v in vectors]
    f = vectors[0].size
    if any(v.size != f for v in vectors):
        raise ValueError("block_diagonal needs equal-length vectors")
    k = len(vectors)
    out = np.zeros((k * f, k))
    for i, v in enumerate(vectors):
        out[i * f:(i + 1) * f, i] = v.values.reshape(-1)
    shapes = [v.shape for v in vectors]

    def grad_fn(g):
        return tuple(g[i * f:(i + 1) * f, i].reshape(shapes[i]) for i in range(k))

    return _emit("block_diagonal", tuple(vectors), out, grad_fn)


def concat_columns(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("nothing to concatenate")
    parts = [_as_tensor(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.ndim != 2 for p in parts):
        raise ValueError("concat_columns needs matrices with equal row counts")
    bounds = np.cumsum([p.shape[1] for p in parts])[:-1]
    out = np.concatenate([p.values for p in parts], axis=1)
    return _emit("concat_columns", tuple(parts), out,
                 lambda g: tuple(np.split(g, bounds, axis=1)))


def split_columns(x: Tensor, widths: Sequence[int]) -> list[Tensor]:
    """Inverse of :func:`concat_columns` for the given block widths."""
    if sum(widths) != x.shape[1]:
        raise ValueError("widths do not cover the columns")
    out, start = [], 0
    for w in widths:
        out.append(take(x, (slice(None), slice(start, start + w))))
        start += w
    return out


def apply_dropout(x: Tensor, rate: float, rng_seed: int, training: bool) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    x = _as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = np.random.default_rng(rng_seed).random(x.shape) >= rate
    scale = keep / (1.0 - rate)
    return _emit("dropout", (x,), x.values * scale, lambda g: (g * scale,))
