"""Shared test helpers: finite differences and tiny model factories."""

import numpy as np
import pytest

from oraclenmt import kernels
from oraclenmt.autodiff import Tape, Tensor
from oraclenmt.model import LmConfig, ModelConfig, ModelParameters, LanguageModelParameters


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    kernels.warmup()


def finite_difference(fn, arrays, h=1e-5):
    """Central finite-difference gradients of scalar fn() w.r.t. each array.

    ``fn`` must recompute from the current contents of ``arrays``.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn()
            flat[i] = orig - h
            fm = fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-5):
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(build_loss, params, h=1e-5, tol=1e-4):
    """Backprop build_loss() once, then compare every param grad to FD."""
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = build_loss()
        tape.backward(loss)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    numeric = finite_difference(lambda: build_loss().item(), [p.data for p in params], h=h)
    worst = max(max_relative_error(a, n) for a, n in zip(analytic, numeric))
    assert worst < tol, f"gradient mismatch: max relative error {worst:.3e}"
    return worst


def tiny_model(seed=0, vocab_src=7, vocab_tgt=6, d_emb=3, d_hid=4, d_att=None):
    config = ModelConfig(vocab_src=vocab_src, vocab_tgt=vocab_tgt,
                         d_emb=d_emb, d_hid=d_hid, d_att=d_att)
    return ModelParameters.init(config, seed)


def tiny_lm(seed=0, vocab=6, d_emb=3, d_hid=4):
    return LanguageModelParameters.init(LmConfig(vocab=vocab, d_emb=d_emb, d_hid=d_hid), seed)


def random_sentence(rng, vocab, lo=1, hi=5):
    length = int(rng.integers(lo, hi + 1))
    return [int(t) for t in rng.integers(4, vocab, size=length)]
