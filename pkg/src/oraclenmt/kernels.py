"""Hot numeric kernels shared by the autodiff ops and the raw decode paths.

Every kernel is written once, in numba-compatible numpy, and compiled with
``@njit`` at import time.  Setting the environment variable
``ORACLENMT_NUMBA=0`` (or installing without numba) selects the pure-numpy
interpretation of the very same functions instead.  ``benchmarks/bench_kernels.py``
compares the two paths.

All floating point work is float64; token ids are int64.  Kernels are
deterministic: no fastmath, no parallel reductions.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("ORACLENMT_NUMBA", "1").strip().lower()
JIT_ENABLED = _FLAG not in ("0", "false", "no", "off")

if JIT_ENABLED:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        JIT_ENABLED = False

if not JIT_ENABLED:
    def _njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def _jit(fn):
    return _njit(cache=True)(fn) if JIT_ENABLED else fn


# ---------------------------------------------------------------------------
# GRU cell, fused forward/backward.
#
# zr_pre = x@Wzr + h@Uzr + bzr ; z = sigma(zr_pre[:, :H]) ; r = sigma(zr_pre[:, H:])
# c = tanh(x@Wc + (r*h)@Uc + bc) ; h_new = (1-z)*h + z*c
# ---------------------------------------------------------------------------

def _gru_cell_forward(x, h, w_zr, u_zr, b_zr, w_c, u_c, b_c):
    hid = h.shape[1]
    zr = 1.0 / (1.0 + np.exp(-(np.dot(x, w_zr) + np.dot(h, u_zr) + b_zr)))
    z = zr[:, :hid]
    r = zr[:, hid:]
    rh = r * h
    c = np.tanh(np.dot(x, w_c) + np.dot(rh, u_c) + b_c)
    h_new = (1.0 - z) * h + z * c
    return h_new, z, r, c, rh


def _gru_cell_backward(g, x, h, z, r, c, rh, w_zr, u_zr, w_c, u_c):
    batch = g.shape[0]
    hid = h.shape[1]
    dz = g * (c - h)
    dh = g * (1.0 - z)
    dc_pre = (g * z) * (1.0 - c * c)

    dx = np.dot(dc_pre, w_c.T)
    drh = np.dot(dc_pre, u_c.T)
    dw_c = np.dot(x.T, dc_pre)
    du_c = np.dot(rh.T, dc_pre)
    db_c = np.sum(dc_pre, axis=0)

    dh += drh * r
    dr = drh * h

    dzr_pre = np.empty((batch, 2 * hid))
    dzr_pre[:, :hid] = dz * z * (1.0 - z)
    dzr_pre[:, hid:] = dr * r * (1.0 - r)

    dx += np.dot(dzr_pre, w_zr.T)
    dh += np.dot(dzr_pre, u_zr.T)
    dw_zr = np.dot(x.T, dzr_pre)
    du_zr = np.dot(h.T, dzr_pre)
    db_zr = np.sum(dzr_pre, axis=0)
    return dx, dh, dw_zr, du_zr, db_zr, dw_c, du_c, db_c


# ---------------------------------------------------------------------------
# Row softmax (max-subtracted) and softmax cross entropy.
# ---------------------------------------------------------------------------

def _softmax_rows(x):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        row = x[i]
        e = np.exp(row - np.max(row))
        out[i] = e / np.sum(e)
    return out


def _softmax_rows_backward(g, s):
    out = np.empty_like(g)
    for i in range(g.shape[0]):
        dot = np.sum(g[i] * s[i])
        out[i] = s[i] * (g[i] - dot)
    return out


def _xent_forward(logits, targets):
    batch = logits.shape[0]
    losses = np.empty(batch)
    probs = np.empty_like(logits)
    for i in range(batch):
        row = logits[i]
        m = np.max(row)
        e = np.exp(row - m)
        z = np.sum(e)
        probs[i] = e / z
        losses[i] = np.log(z) - (row[targets[i]] - m)
    return losses, probs


def _xent_backward(g, probs, targets):
    out = np.empty_like(probs)
    for i in range(probs.shape[0]):
        out[i] = probs[i] * g[i]
        out[i, targets[i]] -= g[i]
    return out


# ---------------------------------------------------------------------------
# Additive attention scores: scores[b, j] = v . tanh(sp[b] + ap[b, j]).
# The tanh activations are cached for the backward pass.
# ---------------------------------------------------------------------------

def _attention_scores_forward(sp, ap, v):
    batch, n, d = ap.shape
    scores = np.empty((batch, n))
    tanh_cache = np.empty((batch, n, d))
    for b in range(batch):
        for j in range(n):
            t = np.tanh(sp[b] + ap[b, j])
            tanh_cache[b, j] = t
            scores[b, j] = np.dot(t, v)
    return scores, tanh_cache


def _attention_scores_backward(g, tanh_cache, v):
    batch, n, d = tanh_cache.shape
    dsp = np.zeros((batch, d))
    dap = np.empty((batch, n, d))
    dv = np.zeros(d)
    for b in range(batch):
        for j in range(n):
            t = tanh_cache[b, j]
            u = (g[b, j] * v) * (1.0 - t * t)
            dap[b, j] = u
            dsp[b] += u
            dv += g[b, j] * t
    return dsp, dap, dv


# ---------------------------------------------------------------------------
# Context read: ctx[b] = sum_j w[b, j] * ann[b, j, :].
# ---------------------------------------------------------------------------

def _attend_forward(w, ann):
    batch, n, d = ann.shape
    ctx = np.empty((batch, d))
    for b in range(batch):
        ctx[b] = np.dot(w[b], ann[b])
    return ctx


def _attend_backward(g, w, ann):
    batch, n, d = ann.shape
    dw = np.empty((batch, n))
    dann = np.empty((batch, n, d))
    for b in range(batch):
        dw[b] = np.dot(ann[b], g[b])
        for j in range(n):
            dann[b, j] = w[b, j] * g[b]
    return dw, dann


# ---------------------------------------------------------------------------
# Embedding gradient scatter and the AdaGrad update.
# ---------------------------------------------------------------------------

def _scatter_add_rows(table, ids, rows):
    for i in range(ids.shape[0]):
        table[ids[i]] += rows[i]


def _adagrad_apply(param, grad, accum, lr, eps, scale):
    g = grad * scale
    accum += g * g
    param -= lr * g / np.sqrt(accum + eps)


gru_cell_forward = _jit(_gru_cell_forward)
gru_cell_backward = _jit(_gru_cell_backward)
softmax_rows = _jit(_softmax_rows)
softmax_rows_backward = _jit(_softmax_rows_backward)
xent_forward = _jit(_xent_forward)
xent_backward = _jit(_xent_backward)
attention_scores_forward = _jit(_attention_scores_forward)
attention_scores_backward = _jit(_attention_scores_backward)
attend_forward = _jit(_attend_forward)
attend_backward = _jit(_attend_backward)
scatter_add_rows = _jit(_scatter_add_rows)
adagrad_apply = _jit(_adagrad_apply)

PURE_KERNELS = {
    "gru_cell_forward": _gru_cell_forward,
    "gru_cell_backward": _gru_cell_backward,
    "softmax_rows": _softmax_rows,
    "softmax_rows_backward": _softmax_rows_backward,
    "xent_forward": _xent_forward,
    "xent_backward": _xent_backward,
    "attention_scores_forward": _attention_scores_forward,
    "attention_scores_backward": _attention_scores_backward,
    "attend_forward": _attend_forward,
    "attend_backward": _attend_backward,
    "scatter_add_rows": _scatter_add_rows,
    "adagrad_apply": _adagrad_apply,
}


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3))
    h = rng.normal(size=(2, 4))
    w_zr = rng.normal(size=(3, 8))
    u_zr = rng.normal(size=(4, 8))
    b_zr = rng.normal(size=8)
    w_c = rng.normal(size=(3, 4))
    u_c = rng.normal(size=(4, 4))
    b_c = rng.normal(size=4)
    h2, z, r, c, rh = gru_cell_forward(x, h, w_zr, u_zr, b_zr, w_c, u_c, b_c)
    gru_cell_backward(h2, x, h, z, r, c, rh, w_zr, u_zr, w_c, u_c)
    logits = rng.normal(size=(2, 5))
    tgt = np.array([1, 3], dtype=np.int64)
    s = softmax_rows(logits)
    softmax_rows_backward(logits, s)
    _, probs = xent_forward(logits, tgt)
    xent_backward(np.ones(2), probs, tgt)
    sp = rng.normal(size=(2, 4))
    ap = rng.normal(size=(2, 3, 4))
    v = rng.normal(size=4)
    scores, cache = attention_scores_forward(sp, ap, v)
    attention_scores_backward(scores, cache, v)
    w = softmax_rows(scores)
    ann = rng.normal(size=(2, 3, 6))
    ctx = attend_forward(w, ann)
    attend_backward(ctx, w, ann)
    table = np.zeros((5, 3))
    scatter_add_rows(table, tgt, x)
    p = rng.normal(size=7)
    adagrad_apply(p, p.copy(), np.zeros(7), 0.1, 1e-8, 1.0)
