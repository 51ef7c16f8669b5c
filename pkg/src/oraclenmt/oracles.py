"""Dynamic oracles: given the prefix actually fed to the decoder so far,
propose the next suitable token.

Both oracles hold frozen parameters and a per-sentence running state that is
advanced with exactly the tokens the student decoder consumed, in order.  The
language-model oracle restricts its argmax to tokens of the current gold
reference (the reference bag); the pretrained-translation-model oracle takes
the unrestricted argmax over the full target vocabulary.

Batched: one handle serves a whole mini-batch, with per-sentence views for
the feed policy.  ``reset_*`` must be called before each new sentence batch.
"""

from __future__ import annotations

from collections import Counter
from typing import List, Optional, Sequence

import numpy as np

from .model import (
    PAD_ID,
    LanguageModelParameters,
    ModelParameters,
    RnnLanguageModel,
    Seq2SeqModel,
)

NEG_INF = -1e30


class ReferenceBag:
    """Multiset of the gold target tokens of one sentence pair."""

    def __init__(self, tokens: Sequence[int]):
        self._counts = Counter(int(t) for t in tokens)
        self._total = len(tokens)

    def __contains__(self, token: int) -> bool:
        return self._counts.get(int(token), 0) > 0

    def __len__(self) -> int:
        return self._total

    def distinct(self) -> List[int]:
        return sorted(t for t, c in self._counts.items() if c > 0)

    def remove(self, token: int) -> None:
        token = int(token)
        if self._counts.get(token, 0) > 0:
            self._counts[token] -= 1
            self._total -= 1

    def is_empty(self) -> bool:
        return self._total == 0


def _pad_batch(sentences: Sequence[Sequence[int]]):
    lengths = np.array([len(s) for s in sentences], dtype=np.int64)
    n = int(lengths.max())
    out = np.full((len(sentences), n), PAD_ID, dtype=np.int64)
    for i, s in enumerate(sentences):
        out[i, : len(s)] = s
    return out, lengths


class _SentenceView:
    """One sentence's proposal slot within a batched oracle handle."""

    __slots__ = ("_oracle", "_index")

    def __init__(self, oracle, index: int):
        self._oracle = oracle
        self._index = index

    def propose_one(self) -> Optional[int]:
        return self._oracle.propose_for(self._index)


class _BatchedOracle:
    """Shared plumbing: frozen scorer, lazy batched proposals, call counter."""

    def __init__(self):
        self.propose_calls = 0
        self._logits: Optional[np.ndarray] = None
        self._proposals: Optional[np.ndarray] = None

    def sentence_view(self, index: int) -> _SentenceView:
        return _SentenceView(self, index)

    def propose_all(self) -> np.ndarray:
        """Token per sentence (int64), -1 where no candidate exists."""
        if self._logits is None:
            raise RuntimeError("oracle queried before any token was fed")
        if self._proposals is None:
            self.propose_calls += 1
            self._proposals = self._compute_proposals()
        return self._proposals

    def propose_for(self, index: int) -> Optional[int]:
        token = int(self.propose_all()[index])
        return None if token < 0 else token

    def propose_one(self) -> Optional[int]:
        return self.propose_for(0)

    def _compute_proposals(self) -> np.ndarray:
        raise NotImplementedError


class LanguageModelOracle(_BatchedOracle):
    """Next-token proposals from a frozen LM, restricted to the reference bag.

    Ties break toward the lowest token id.  With ``depleting=True`` a proposed
    token is removed from the bag once it is actually fed (``consume``).
    """

    kind = "lm"

    def __init__(self, lm_params: LanguageModelParameters, depleting: bool = False):
        super().__init__()
        self.lm = RnnLanguageModel(lm_params.frozen_copy())
        self.depleting = depleting
        self._hidden = None
        self._bags: List[ReferenceBag] = []
        self._bag_mask: Optional[np.ndarray] = None

    def checksum(self) -> str:
        return self.lm.params.checksum()

    def reset_batch(self, sources, gold_targets: Sequence[Sequence[int]]) -> None:
        del sources  # the LM only sees the target side
        batch = len(gold_targets)
        vocab = self.lm.config.vocab
        self._hidden = self.lm.initial_hidden(batch)
        self._bags = [ReferenceBag(t) for t in gold_targets]
        mask = np.zeros((batch, vocab), dtype=bool)
        for i, bag in enumerate(self._bags):
            mask[i, bag.distinct()] = True
        self._bag_mask = mask
        self._logits = None
        self._proposals = None

    def advance(self, fed_tokens: np.ndarray) -> None:
        logits, self._hidden = self.lm.step_batch(self._hidden, fed_tokens)
        self._logits = logits.data
        self._proposals = None

    def _compute_proposals(self) -> np.ndarray:
        masked = np.where(self._bag_mask, self._logits, NEG_INF)
        proposals = np.argmax(masked, axis=1).astype(np.int64)
        proposals[~self._bag_mask.any(axis=1)] = -1
        return proposals

    def bag(self, index: int = 0) -> ReferenceBag:
        return self._bags[index]

    def consume(self, index: int, token: int) -> None:
        """Record that an oracle token was fed; depletes the bag if enabled."""
        if self.depleting:
            self._bags[index].remove(token)
            if token not in self._bags[index]:
                self._bag_mask[index, token] = False
            self._proposals = None


class PretrainedModelOracle(_BatchedOracle):
    """Proposals from a frozen translation model decoding alongside the student."""

    kind = "pretrained"

    def __init__(self, model_params: ModelParameters):
        super().__init__()
        self.model = Seq2SeqModel(model_params.frozen_copy())
        self._enc = None
        self._state = None

    def checksum(self) -> str:
        return self.model.params.checksum()

    def reset_batch(self, sources: Sequence[Sequence[int]], gold_targets=None) -> None:
        del gold_targets  # the frozen model conditions on the source instead
        src, lengths = _pad_batch(sources)
        self._enc = self.model.encode_batch(src, lengths)
        self._state = self.model.initial_decoder_state(self._enc)
        self._logits = None
        self._proposals = None

    def advance(self, fed_tokens: np.ndarray) -> None:
        if self._enc is None:
            raise RuntimeError("pretrained oracle used before reset_batch")
        logits, self._state, _ = self.model.decode_step_batch(
            self._state, fed_tokens, self._enc
        )
        self._logits = logits.data
        self._proposals = None

    def consume(self, index: int, token: int) -> None:
        pass

    def _compute_proposals(self) -> np.ndarray:
        return np.argmax(self._logits, axis=1).astype(np.int64)


def reset_for_sentence(handle, source: Sequence[int], gold_target: Sequence[int]) -> None:
    """Prepare the oracle for one new sentence pair."""
    handle.reset_batch([list(source)], [list(gold_target)])


def lm_oracle_next(handle: LanguageModelOracle, prefix_last_token: int) -> Optional[int]:
    """Advance the LM by the last fed token; reference-restricted argmax."""
    if handle.kind != "lm":
        raise ValueError(f"expected an lm oracle, got kind {handle.kind!r}")
    handle.advance(np.array([prefix_last_token], dtype=np.int64))
    return handle.propose_one()


def pretrained_oracle_next(handle: PretrainedModelOracle, prefix_last_token: int) -> Optional[int]:
    """Advance the frozen decoder by the last fed token; full-vocabulary argmax."""
    if handle.kind != "pretrained":
        raise ValueError(f"expected a pretrained oracle, got kind {handle.kind!r}")
    handle.advance(np.array([prefix_last_token], dtype=np.int64))
    return handle.propose_one()
