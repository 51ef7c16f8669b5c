"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array plus an optional gradient.  Operations
executed while a :class:`Tape` is active are recorded in execution order;
``backward`` replays the tape once, in reverse, accumulating gradients into
every ``requires_grad`` tensor.  One tape per training step, discarded after
the optimizer update.

Broadcasting is deliberately restricted: elementwise ops accept equal shapes
or a python scalar, and bias addition / axis reduction are their own ops, so
every gradient rule stays auditable.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


_ACTIVE_TAPE: Optional["Tape"] = None


class Tensor:
    """Dense float64 array with optional reverse-mode gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tensor_sum(self, axis=axis)


class Tape:
    """Ordered record of executed operations.

    Operations are appended in execution order, which is a valid topological
    order of the data flow; ``backward`` visits each node exactly once, in
    reverse.
    """

    def __init__(self):
        self._nodes: list = []  # (name, inputs, output, backward_fn)

    def __len__(self):
        return len(self._nodes)

    def __enter__(self):
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        return False

    def op_names(self):
        return [n[0] for n in self._nodes]

    def backward(self, loss: Tensor) -> None:
        """Seed ``loss.grad = 1`` and run every recorded backward once."""
        if loss.data.ndim != 0:
            raise ShapeError(
                f"backward expects a scalar loss, got shape {loss.shape}"
            )
        _accumulate(loss, np.ones_like(loss.data))
        for _, _, out, backward_fn in reversed(self._nodes):
            if out.grad is not None:
                backward_fn(out.grad)


def backward(loss: Tensor) -> None:
    """Backpropagate from ``loss`` through the currently active tape."""
    if _ACTIVE_TAPE is None:
        raise RuntimeError("backward called with no active Tape")
    _ACTIVE_TAPE.backward(loss)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # Never update .grad in place: the array may alias another node's grad.
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _record(name, inputs, out, backward_fn):
    if _ACTIVE_TAPE is not None and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        _ACTIVE_TAPE._nodes.append((name, inputs, out, backward_fn))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes do not align: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _record("matmul", (a, b), out, bwd)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias: x[..., n] + b[n] with db = sum over rows."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias shapes do not align: {x.shape} + {b.shape}")
    out = Tensor(x.data + b.data)

    def bwd(g):
        if x.requires_grad:
            _accumulate(x, g)
        if b.requires_grad:
            _accumulate(b, g.sum(axis=0))

    return _record("add_bias", (x, b), out, bwd)


# ---------------------------------------------------------------------------
# Elementwise ops: equal shapes or a python scalar, nothing else.
# ---------------------------------------------------------------------------

def _check_elementwise(name, a, b):
    if isinstance(b, Tensor) and a.shape != b.shape and b.data.ndim != 0 and a.data.ndim != 0:
        raise ShapeError(f"{name} shapes do not match: {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor) and not isinstance(a, Tensor):
        raise TypeError("add requires at least one Tensor")
    if not isinstance(b, Tensor):
        a = _as_tensor(a)
        out = Tensor(a.data + float(b))

        def bwd(g):
            _accumulate(a, g)

        return _record("add_scalar", (a,), out, bwd)
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("add", a, b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g if a.data.ndim else np.sum(g))
        if b.requires_grad:
            _accumulate(b, g if b.data.ndim else np.sum(g))

    return _record("add", (a, b), out, bwd)


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("sub", a, b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, -g)

    return _record("sub", (a, b), out, bwd)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and not isinstance(a, Tensor):
        raise TypeError("mul requires at least one Tensor")
    if not isinstance(b, Tensor):
        a = _as_tensor(a)
        k = float(b)
        out = Tensor(a.data * k)

        def bwd(g):
            _accumulate(a, g * k)

        return _record("mul_scalar", (a,), out, bwd)
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise("mul", a, b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        if a.requires_grad:
            ga = g * b.data
            _accumulate(a, ga if a.data.ndim else np.sum(ga))
        if b.requires_grad:
            gb = g * a.data
            _accumulate(b, gb if b.data.ndim else np.sum(gb))

    return _record("mul", (a, b), out, bwd)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s)

    def bwd(g):
        _accumulate(x, g * s * (1.0 - s))

    return _record("sigmoid", (x,), out, bwd)


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    t = np.tanh(x.data)
    out = Tensor(t)

    def bwd(g):
        _accumulate(x, g * (1.0 - t * t))

    return _record("tanh", (x,), out, bwd)


_ELEMENTWISE = {"add": add, "mul": mul, "sigmoid": sigmoid, "tanh": tanh}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise op by name: add, mul, sigmoid or tanh."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------

def tensor_sum(x: Tensor, axis=None) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.sum(axis=axis))

    def bwd(g):
        if axis is None:
            _accumulate(x, np.full(x.data.shape, float(g)))
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy())

    return _record("sum", (x,), out, bwd)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.reshape(shape))

    def bwd(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _record("reshape", (x,), out, bwd)


def concat(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(np.concatenate((a.data, b.data), axis=axis))
    split = a.data.shape[axis]

    def bwd(g):
        ga, gb = np.split(g, [split], axis=axis)
        if a.requires_grad:
            _accumulate(a, ga)
        if b.requires_grad:
            _accumulate(b, gb)

    return _record("concat", (a, b), out, bwd)


def stack(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def bwd(g):
        parts = np.split(g, len(tensors), axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                _accumulate(t, np.squeeze(p, axis=axis))

    return _record("stack", tuple(tensors), out, bwd)


def linear3(x3: Tensor, w: Tensor) -> Tensor:
    """Apply a [k, m] matrix to the last axis of a [b, n, k] tensor."""
    b, n, k = x3.shape
    flat = reshape(x3, (b * n, k))
    return reshape(matmul(flat, w), (b, n, w.shape[1]))


# ---------------------------------------------------------------------------
# Softmax family
# ---------------------------------------------------------------------------

def softmax(x: Tensor) -> Tensor:
    """Row softmax over the last axis (max-subtracted)."""
    x = _as_tensor(x)
    data2d = x.data if x.data.ndim == 2 else x.data.reshape(1, -1)
    s2d = kernels.softmax_rows(data2d)
    s = s2d if x.data.ndim == 2 else s2d.reshape(x.data.shape)
    out = Tensor(s)

    def bwd(g):
        g2d = g if g.ndim == 2 else g.reshape(1, -1)
        dx = kernels.softmax_rows_backward(g2d, s2d)
        _accumulate(x, dx if x.data.ndim == 2 else dx.reshape(x.data.shape))

    return _record("softmax", (x,), out, bwd)


def softmax_cross_entropy(logits: Tensor, target) -> Tensor:
    """Negative log softmax probability of the target id(s).

    A [v] logits vector with an int target yields a scalar; a [b, v] matrix
    with an id array yields the per-example loss vector.  Computed with
    max-subtraction; the gradient is ``softmax(logits) - one_hot(target)``.
    """
    logits = _as_tensor(logits)
    single = logits.data.ndim == 1
    data2d = logits.data.reshape(1, -1) if single else logits.data
    ids = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if ids.shape[0] != data2d.shape[0]:
        raise ShapeError(
            f"softmax_cross_entropy got {data2d.shape[0]} rows but {ids.shape[0]} targets"
        )
    vocab = data2d.shape[1]
    if np.any(ids < 0) or np.any(ids >= vocab):
        raise IndexError(f"target id out of range [0, {vocab}): {ids}")
    losses, probs = kernels.xent_forward(data2d, ids)
    out = Tensor(losses[0] if single else losses)

    def bwd(g):
        g1 = np.atleast_1d(np.asarray(g, dtype=np.float64))
        dlogits = kernels.xent_backward(g1, probs, ids)
        _accumulate(logits, dlogits[0] if single else dlogits)

    return _record("softmax_cross_entropy", (logits,), out, bwd)


# ---------------------------------------------------------------------------
# Fused network ops backed by kernels
# ---------------------------------------------------------------------------

def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; the backward scatter-adds into the table."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embedding ids must be 1-d, got shape {ids.shape}")
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range [0, {vocab}): {ids}")
    out = Tensor(table.data[ids])

    def bwd(g):
        dtable = np.zeros_like(table.data)
        kernels.scatter_add_rows(dtable, ids, g)
        _accumulate(table, dtable)

    return _record("embedding_lookup", (table,), out, bwd)


def gru_cell(x: Tensor, h: Tensor, w_zr: Tensor, u_zr: Tensor, b_zr: Tensor,
             w_c: Tensor, u_c: Tensor, b_c: Tensor) -> Tensor:
    """Fused GRU transition h_new = GRU(x, h); see kernels for the math."""
    args = (x, h, w_zr, u_zr, b_zr, w_c, u_c, b_c)
    if x.shape[0] != h.shape[0]:
        raise ShapeError(f"gru_cell batch mismatch: {x.shape} vs {h.shape}")
    h_new, z, r, c, rh = kernels.gru_cell_forward(*(a.data for a in args))
    out = Tensor(h_new)

    def bwd(g):
        dx, dh, dw_zr, du_zr, db_zr, dw_c, du_c, db_c = kernels.gru_cell_backward(
            g, x.data, h.data, z, r, c, rh, w_zr.data, u_zr.data, w_c.data, u_c.data
        )
        for t, dt in zip(args, (dx, dh, dw_zr, du_zr, db_zr, dw_c, du_c, db_c)):
            if t.requires_grad:
                _accumulate(t, dt)

    return _record("gru_cell", args, out, bwd)


def attention_scores(state_proj: Tensor, ann_proj: Tensor, v: Tensor) -> Tensor:
    """Additive alignment scores: v . tanh(state_proj[b] + ann_proj[b, j])."""
    if state_proj.shape != (ann_proj.shape[0], ann_proj.shape[2]):
        raise ShapeError(
            f"attention_scores shapes do not align: {state_proj.shape} vs {ann_proj.shape}"
        )
    scores, cache = kernels.attention_scores_forward(
        state_proj.data, ann_proj.data, v.data
    )
    out = Tensor(scores)

    def bwd(g):
        dsp, dap, dv = kernels.attention_scores_backward(g, cache, v.data)
        if state_proj.requires_grad:
            _accumulate(state_proj, dsp)
        if ann_proj.requires_grad:
            _accumulate(ann_proj, dap)
        if v.requires_grad:
            _accumulate(v, dv)

    return _record("attention_scores", (state_proj, ann_proj, v), out, bwd)


def attend(weights: Tensor, annotations: Tensor) -> Tensor:
    """Convex read of annotations: ctx[b] = sum_j weights[b, j] ann[b, j]."""
    if weights.shape != annotations.shape[:2]:
        raise ShapeError(
            f"attend shapes do not align: {weights.shape} vs {annotations.shape}"
        )
    ctx = kernels.attend_forward(weights.data, annotations.data)
    out = Tensor(ctx)

    def bwd(g):
        dw, dann = kernels.attend_backward(g, weights.data, annotations.data)
        if weights.requires_grad:
            _accumulate(weights, dw)
        if annotations.requires_grad:
            _accumulate(annotations, dann)

    return _record("attend", (weights, annotations), out, bwd)
