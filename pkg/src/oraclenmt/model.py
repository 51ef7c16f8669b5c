"""Attentional encoder-decoder network and a standalone recurrent LM.

The translation model is a bidirectional GRU encoder over the source plus a
two-transition conditional GRU decoder: GRU1 consumes the fed token, an
additive-attention read over the encoder annotations produces the context,
and GRU2 consumes the context to yield the output state, which is projected
to target-vocabulary logits.

All state-carrying computation goes through the autodiff ops, so the same
code path serves training (tape active) and decoding (no tape).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3

INIT_SCALE = 0.08


@dataclass(frozen=True)
class ModelConfig:
    vocab_src: int
    vocab_tgt: int
    d_emb: int = 32
    d_hid: int = 64
    d_att: Optional[int] = None

    @property
    def att_dim(self) -> int:
        return self.d_att if self.d_att is not None else self.d_hid

    def hyperparams(self) -> dict:
        return {
            "kind": "seq2seq",
            "vocab_src": self.vocab_src,
            "vocab_tgt": self.vocab_tgt,
            "d_emb": self.d_emb,
            "d_hid": self.d_hid,
            "d_att": self.att_dim,
        }


def _uniform(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape), requires_grad=True)


class GruWeights:
    """The six tensors of one GRU transition (packed update/reset gates)."""

    def __init__(self, w_zr, u_zr, b_zr, w_c, u_c, b_c):
        self.w_zr, self.u_zr, self.b_zr = w_zr, u_zr, b_zr
        self.w_c, self.u_c, self.b_c = w_c, u_c, b_c

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_hid: int) -> "GruWeights":
        return cls(
            _uniform(rng, (d_in, 2 * d_hid)),
            _uniform(rng, (d_hid, 2 * d_hid)),
            _uniform(rng, (2 * d_hid,)),
            _uniform(rng, (d_in, d_hid)),
            _uniform(rng, (d_hid, d_hid)),
            _uniform(rng, (d_hid,)),
        )

    def tensors(self):
        return (self.w_zr, self.u_zr, self.b_zr, self.w_c, self.u_c, self.b_c)

    def named(self, prefix: str) -> dict:
        names = ("w_zr", "u_zr", "b_zr", "w_c", "u_c", "b_c")
        return {f"{prefix}.{n}": t for n, t in zip(names, self.tensors())}


class ModelParameters:
    """All learnable tensors of the translation model."""

    GRU_PARTS = ("enc_fwd", "enc_bwd", "dec_gru1", "dec_gru2")

    def __init__(self, config: ModelConfig, tensors: dict):
        self.config = config
        self.emb_src = tensors["emb_src"]
        self.emb_tgt = tensors["emb_tgt"]
        self.enc_fwd = tensors["enc_fwd"]
        self.enc_bwd = tensors["enc_bwd"]
        self.dec_gru1 = tensors["dec_gru1"]
        self.dec_gru2 = tensors["dec_gru2"]
        self.att_w = tensors["att_w"]
        self.att_u = tensors["att_u"]
        self.att_v = tensors["att_v"]
        self.init_w = tensors["init_w"]
        self.init_b = tensors["init_b"]
        self.out_w = tensors["out_w"]
        self.out_b = tensors["out_b"]

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "ModelParameters":
        rng = np.random.default_rng([seed, 0])
        h, e, a = config.d_hid, config.d_emb, config.att_dim
        t = {
            "emb_src": _uniform(rng, (config.vocab_src, e)),
            "emb_tgt": _uniform(rng, (config.vocab_tgt, e)),
            "enc_fwd": GruWeights.init(rng, e, h),
            "enc_bwd": GruWeights.init(rng, e, h),
            "dec_gru1": GruWeights.init(rng, e, h),
            "dec_gru2": GruWeights.init(rng, 2 * h, h),
            "att_w": _uniform(rng, (h, a)),
            "att_u": _uniform(rng, (2 * h, a)),
            "att_v": _uniform(rng, (a,)),
            "init_w": _uniform(rng, (2 * h, h)),
            "init_b": _uniform(rng, (h,)),
            "out_w": _uniform(rng, (h, config.vocab_tgt)),
            "out_b": _uniform(rng, (config.vocab_tgt,)),
        }
        return cls(config, t)

    def named(self) -> dict:
        out = {"emb_src": self.emb_src, "emb_tgt": self.emb_tgt}
        for part in self.GRU_PARTS:
            out.update(getattr(self, part).named(part))
        out.update(
            {
                "att_w": self.att_w,
                "att_u": self.att_u,
                "att_v": self.att_v,
                "init_w": self.init_w,
                "init_b": self.init_b,
                "out_w": self.out_w,
                "out_b": self.out_b,
            }
        )
        return out

    def arrays(self) -> dict:
        return {name: t.data for name, t in self.named().items()}

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict,
                    requires_grad: bool = True) -> "ModelParameters":
        def wrap(name):
            return Tensor(arrays[name].copy(), requires_grad=requires_grad)

        t = {"emb_src": wrap("emb_src"), "emb_tgt": wrap("emb_tgt")}
        for part in cls.GRU_PARTS:
            t[part] = GruWeights(*(wrap(f"{part}.{n}")
                                   for n in ("w_zr", "u_zr", "b_zr", "w_c", "u_c", "b_c")))
        for name in ("att_w", "att_u", "att_v", "init_w", "init_b", "out_w", "out_b"):
            t[name] = wrap(name)
        return cls(config, t)

    def frozen_copy(self) -> "ModelParameters":
        return ModelParameters.from_arrays(self.config, self.arrays(), requires_grad=False)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.named().values())

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, t in sorted(self.named().items()):
            digest.update(name.encode())
            digest.update(t.data.tobytes())
        return digest.hexdigest()


@dataclass
class BatchEncoding:
    """Encoder outputs for a padded batch of source sentences."""

    annotations: Tensor        # [b, n, 2*d_hid]
    ann_proj: Tensor           # [b, n, d_att], attention keys
    init_state: Tensor         # [b, d_hid]
    final_state: Tensor        # [b, d_hid], forward direction at each true end
    src_mask: np.ndarray       # [b, n] float, 1.0 at real positions
    att_bias: Tensor           # [b, n] constant, -1e9 at padding

    @property
    def batch_size(self) -> int:
        return self.src_mask.shape[0]

    @property
    def src_len(self) -> int:
        return self.src_mask.shape[1]


@dataclass
class EncoderOutput:
    """Single-sentence view: one annotation per source position."""

    annotations: Tensor        # [n, 2*d_hid]
    final_state: Tensor        # [d_hid]
    batch: BatchEncoding = field(repr=False, default=None)


@dataclass
class DecoderState:
    hidden: Tensor             # [b, d_hid]
    step_index: int
    fed_token: object          # int or int64 array [b]: the token(s) consumed


class Seq2SeqModel:
    """Encoder-decoder with additive attention over bidirectional annotations."""

    def __init__(self, params: ModelParameters):
        self.params = params
        self.config = params.config

    # -- batched core ------------------------------------------------------

    def encode_batch(self, src: np.ndarray, lengths: np.ndarray) -> BatchEncoding:
        p = self.params
        batch, n = src.shape
        hid = self.config.d_hid
        mask = (np.arange(n)[None, :] < lengths[:, None]).astype(np.float64)

        embeds = [ad.embedding_lookup(p.emb_src, src[:, t]) for t in range(n)]
        masks_h = [Tensor(np.repeat(mask[:, t:t + 1], hid, axis=1)) for t in range(n)]

        def scan(weights, order):
            h = Tensor(np.zeros((batch, hid)))
            states = [None] * n
            for t in order:
                h_new = ad.gru_cell(embeds[t], h, *weights.tensors())
                # pad steps carry the previous state through unchanged
                h = ad.add(h, ad.mul(masks_h[t], ad.sub(h_new, h)))
                states[t] = h
            return states, h

        fwd_states, fwd_last = scan(p.enc_fwd, range(n))
        bwd_states, _ = scan(p.enc_bwd, range(n - 1, -1, -1))

        ann = ad.stack(
            [ad.concat(fwd_states[t], bwd_states[t], axis=1) for t in range(n)], axis=1
        )
        ann_proj = ad.linear3(ann, p.att_u)

        mask3 = Tensor(np.repeat(mask[:, :, None], 2 * hid, axis=2))
        inv_len = Tensor(np.repeat(1.0 / lengths[:, None].astype(np.float64), 2 * hid, axis=1))
        mean_ann = ad.mul(ad.tensor_sum(ad.mul(ann, mask3), axis=1), inv_len)
        init_state = ad.tanh(ad.add_bias(ad.matmul(mean_ann, p.init_w), p.init_b))

        att_bias = Tensor((mask - 1.0) * 1e9)
        return BatchEncoding(ann, ann_proj, init_state, fwd_last, mask, att_bias)

    def initial_decoder_state(self, enc: BatchEncoding) -> DecoderState:
        fed = np.full(enc.batch_size, BOS_ID, dtype=np.int64)
        return DecoderState(hidden=enc.init_state, step_index=0, fed_token=fed)

    def decode_step_batch(self, state: DecoderState, tokens: np.ndarray,
                          enc: BatchEncoding):
        p = self.params
        tokens = np.asarray(tokens, dtype=np.int64)
        if state.hidden.shape[0] != enc.batch_size:
            raise ValueError(
                f"stale decoder state: batch {state.hidden.shape[0]} does not match "
                f"encoder output batch {enc.batch_size}"
            )
        x = ad.embedding_lookup(p.emb_tgt, tokens)
        s1 = ad.gru_cell(x, state.hidden, *p.dec_gru1.tensors())
        proj = ad.matmul(s1, p.att_w)
        scores = ad.attention_scores(proj, enc.ann_proj, p.att_v)
        att = ad.softmax(ad.add(scores, enc.att_bias))
        ctx = ad.attend(att, enc.annotations)
        s2 = ad.gru_cell(ctx, s1, *p.dec_gru2.tensors())
        logits = ad.add_bias(ad.matmul(s2, p.out_w), p.out_b)
        next_state = DecoderState(hidden=s2, step_index=state.step_index + 1,
                                  fed_token=tokens)
        return logits, next_state, att

    # -- single-sentence surface --------------------------------------------

    def encode(self, source: Sequence[int]) -> EncoderOutput:
        if len(source) == 0:
            raise ValueError("encode requires a non-empty source sentence")
        src = np.asarray([source], dtype=np.int64)
        enc = self.encode_batch(src, np.array([len(source)], dtype=np.int64))
        n = len(source)
        ann = ad.reshape(enc.annotations, (n, 2 * self.config.d_hid))
        final = ad.reshape(enc.final_state, (self.config.d_hid,))
        return EncoderOutput(annotations=ann, final_state=final, batch=enc)

    def initial_state(self, enc: EncoderOutput) -> DecoderState:
        state = self.initial_decoder_state(enc.batch)
        return DecoderState(hidden=state.hidden, step_index=0, fed_token=BOS_ID)

    def decode_step(self, state: DecoderState, input_token: int, enc: EncoderOutput):
        logits, next_state, att = self.decode_step_batch(
            state, np.array([input_token], dtype=np.int64), enc.batch
        )
        next_state.fed_token = int(input_token)
        return (
            ad.reshape(logits, (self.config.vocab_tgt,)),
            next_state,
            ad.reshape(att, (enc.batch.src_len,)),
        )

    def sentence_log_prob(self, source: Sequence[int], target: Sequence[int],
                          feed_tokens: Sequence[int]) -> Tensor:
        """Sum over steps of log softmax(logits_t)[target_t], feeding feed_tokens.

        With ``feed_tokens = [BOS] + target[:-1]`` this is the teacher-forced
        sentence log probability.
        """
        if len(feed_tokens) != len(target):
            raise ValueError(
                f"feed_tokens length {len(feed_tokens)} != target length {len(target)}"
            )
        if len(target) == 0:
            return Tensor(0.0)
        if feed_tokens[0] != BOS_ID:
            raise ValueError(f"feed_tokens must start with BOS, got {feed_tokens[0]}")
        enc = self.encode_batch(np.asarray([source], dtype=np.int64),
                                np.array([len(source)], dtype=np.int64))
        state = self.initial_decoder_state(enc)
        total = Tensor(0.0)
        for fed, tgt in zip(feed_tokens, target):
            logits, state, _ = self.decode_step_batch(
                state, np.array([fed], dtype=np.int64), enc
            )
            loss = ad.softmax_cross_entropy(logits, np.array([tgt], dtype=np.int64))
            total = ad.add(total, ad.tensor_sum(loss))
        return ad.mul(total, -1.0)


# ---------------------------------------------------------------------------
# Recurrent language model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LmConfig:
    vocab: int
    d_emb: int = 32
    d_hid: int = 64

    def hyperparams(self) -> dict:
        return {"kind": "lm", "vocab": self.vocab, "d_emb": self.d_emb,
                "d_hid": self.d_hid}


class LanguageModelParameters:
    def __init__(self, config: LmConfig, emb, gru, out_w, out_b):
        self.config = config
        self.emb = emb
        self.gru = gru
        self.out_w = out_w
        self.out_b = out_b

    @classmethod
    def init(cls, config: LmConfig, seed: int) -> "LanguageModelParameters":
        rng = np.random.default_rng([seed, 0])
        return cls(
            config,
            _uniform(rng, (config.vocab, config.d_emb)),
            GruWeights.init(rng, config.d_emb, config.d_hid),
            _uniform(rng, (config.d_hid, config.vocab)),
            _uniform(rng, (config.vocab,)),
        )

    def named(self) -> dict:
        out = {"emb": self.emb}
        out.update(self.gru.named("gru"))
        out.update({"out_w": self.out_w, "out_b": self.out_b})
        return out

    def arrays(self) -> dict:
        return {name: t.data for name, t in self.named().items()}

    @classmethod
    def from_arrays(cls, config: LmConfig, arrays: dict,
                    requires_grad: bool = True) -> "LanguageModelParameters":
        def wrap(name):
            return Tensor(arrays[name].copy(), requires_grad=requires_grad)

        gru = GruWeights(*(wrap(f"gru.{n}")
                           for n in ("w_zr", "u_zr", "b_zr", "w_c", "u_c", "b_c")))
        return cls(config, wrap("emb"), gru, wrap("out_w"), wrap("out_b"))

    def frozen_copy(self) -> "LanguageModelParameters":
        return LanguageModelParameters.from_arrays(self.config, self.arrays(),
                                                   requires_grad=False)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.named().values())

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, t in sorted(self.named().items()):
            digest.update(name.encode())
            digest.update(t.data.tobytes())
        return digest.hexdigest()


class RnnLanguageModel:
    """Single-layer GRU next-token model over the target vocabulary."""

    def __init__(self, params: LanguageModelParameters):
        self.params = params
        self.config = params.config

    def initial_hidden(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.config.d_hid)))

    def step_batch(self, hidden: Tensor, tokens: np.ndarray):
        p = self.params
        x = ad.embedding_lookup(p.emb, np.asarray(tokens, dtype=np.int64))
        h = ad.gru_cell(x, hidden, *p.gru.tensors())
        logits = ad.add_bias(ad.matmul(h, p.out_w), p.out_b)
        return logits, h

    def step(self, state: DecoderState, input_token: int):
        logits, h = self.step_batch(state.hidden,
                                    np.array([input_token], dtype=np.int64))
        next_state = DecoderState(hidden=h, step_index=state.step_index + 1,
                                  fed_token=int(input_token))
        return ad.reshape(logits, (self.config.vocab,)), next_state

    def initial_state(self) -> DecoderState:
        return DecoderState(hidden=self.initial_hidden(1), step_index=0,
                            fed_token=BOS_ID)


def lm_step(state: DecoderState, input_token: int, lm_params: LanguageModelParameters):
    """Advance the language model one token; logits for the next position."""
    return RnnLanguageModel(lm_params).step(state, input_token)
