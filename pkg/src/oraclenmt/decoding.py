"""Inference-time generation: greedy decoding and beam search.

Generation feeds the model its own most likely token until EOS or a length
cap (default ``2 * len(source) + 5``).  Beam search accumulates per-step log
softmax scores and compares finished hypotheses by length-normalized score;
width 1 coincides exactly with greedy decoding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor
from .model import BOS_ID, EOS_ID, PAD_ID, BatchEncoding, DecoderState, Seq2SeqModel


@dataclass
class Hypothesis:
    """A (possibly finished) candidate translation.

    ``tokens`` are the generated ids, including the terminating EOS when one
    was produced; ``log_prob`` is the sum of per-step log-softmax scores of
    exactly those tokens.
    """

    tokens: Tuple[int, ...]
    log_prob: float
    state: Optional[DecoderState]
    finished: bool

    @property
    def surface(self) -> List[int]:
        return [t for t in self.tokens if t != EOS_ID]

    def normalized_score(self) -> float:
        return self.log_prob / max(1, len(self.tokens))


def default_max_len(source_len: int) -> int:
    return 2 * source_len + 5


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _tile_encoding(enc: BatchEncoding, k: int) -> BatchEncoding:
    """Repeat a batch-1 encoding k times for beam-parallel decoding."""

    def rep(t: Tensor, reps):
        return Tensor(np.repeat(t.data, reps, axis=0))

    return BatchEncoding(
        annotations=rep(enc.annotations, k),
        ann_proj=rep(enc.ann_proj, k),
        init_state=rep(enc.init_state, k),
        final_state=rep(enc.final_state, k),
        src_mask=np.repeat(enc.src_mask, k, axis=0),
        att_bias=rep(enc.att_bias, k),
    )


def greedy_decode(model: Seq2SeqModel, source: Sequence[int],
                  max_len: Optional[int] = None) -> List[int]:
    """Feed the argmax token back in until EOS or the cap; EOS is stripped."""
    return greedy_decode_batch(model, [list(source)], max_len=max_len)[0]


def greedy_decode_batch(model: Seq2SeqModel, sources: Sequence[Sequence[int]],
                        max_len: Optional[int] = None) -> List[List[int]]:
    lengths = np.array([len(s) for s in sources], dtype=np.int64)
    n = int(lengths.max())
    src = np.full((len(sources), n), PAD_ID, dtype=np.int64)
    for i, s in enumerate(sources):
        src[i, : len(s)] = s
    caps = np.array(
        [max_len if max_len is not None else default_max_len(len(s)) for s in sources]
    )
    if np.any(caps < 1):
        raise ValueError("max_len must be >= 1")

    enc = model.encode_batch(src, lengths)
    state = model.initial_decoder_state(enc)
    fed = np.full(len(sources), BOS_ID, dtype=np.int64)
    outputs: List[List[int]] = [[] for _ in sources]
    finished = np.zeros(len(sources), dtype=bool)
    for step in range(int(caps.max())):
        logits, state, _ = model.decode_step_batch(state, fed, enc)
        best = np.argmax(logits.data, axis=1)
        for i in range(len(sources)):
            if finished[i]:
                continue
            token = int(best[i])
            if token == EOS_ID:
                finished[i] = True
            else:
                outputs[i].append(token)
                if len(outputs[i]) >= caps[i]:
                    finished[i] = True
        if finished.all():
            break
        fed = np.where(finished, PAD_ID, best).astype(np.int64)
    return outputs


def beam_decode(model: Seq2SeqModel, source: Sequence[int], beam_width: int,
                max_len: Optional[int] = None) -> Hypothesis:
    """Beam search over accumulated log probabilities.

    Finished hypotheses (EOS emitted, or length cap hit) compete by
    length-normalized log probability.  Ties in candidate expansion break
    deterministically toward earlier hypotheses and lower token ids.
    """
    if beam_width < 1:
        raise ValueError(f"beam_width must be >= 1, got {beam_width}")
    cap = max_len if max_len is not None else default_max_len(len(source))
    if cap < 1:
        raise ValueError("max_len must be >= 1")

    src = np.asarray([source], dtype=np.int64)
    enc1 = model.encode_batch(src, np.array([len(source)], dtype=np.int64))
    alive = [Hypothesis(tokens=(), log_prob=0.0,
                        state=model.initial_decoder_state(enc1), finished=False)]
    done: List[Hypothesis] = []
    enc_cache = {1: enc1}

    for _ in range(cap):
        k = len(alive)
        if k not in enc_cache:
            enc_cache[k] = _tile_encoding(enc1, k)
        enc = enc_cache[k]
        hidden = Tensor(np.concatenate([h.state.hidden.data for h in alive], axis=0))
        fed = np.array(
            [h.tokens[-1] if h.tokens else BOS_ID for h in alive], dtype=np.int64
        )
        state = DecoderState(hidden=hidden, step_index=alive[0].state.step_index,
                             fed_token=fed)
        logits, new_state, _ = model.decode_step_batch(state, fed, enc)
        logp = _log_softmax_rows(logits.data)
        scores = np.array([h.log_prob for h in alive])[:, None] + logp
        flat = scores.ravel()
        # stable sort keeps ties ordered by (hypothesis index, token id)
        order = np.argsort(-flat, kind="stable")[: beam_width]

        next_alive: List[Hypothesis] = []
        vocab = logp.shape[1]
        for idx in order:
            h_idx, token = divmod(int(idx), vocab)
            parent = alive[h_idx]
            child_state = DecoderState(
                hidden=Tensor(new_state.hidden.data[h_idx: h_idx + 1]),
                step_index=new_state.step_index,
                fed_token=token,
            )
            child = Hypothesis(
                tokens=parent.tokens + (token,),
                log_prob=float(flat[idx]),
                state=child_state,
                finished=token == EOS_ID,
            )
            if child.finished:
                done.append(child)
            else:
                next_alive.append(child)
        alive = next_alive
        if not alive:
            break

    for h in alive:  # length cap reached
        done.append(Hypothesis(tokens=h.tokens, log_prob=h.log_prob,
                               state=h.state, finished=True))

    best = done[0]
    for h in done[1:]:
        if h.normalized_score() > best.normalized_score():
            best = h
    return best
