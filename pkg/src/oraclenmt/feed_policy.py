"""Per-step choice of the decoder input during training.

At each decoding step a coin ``p`` is sampled; ``p < eps`` feeds the model's
own previous estimate.  Otherwise the gold token is fed, unless an estimate
was already used earlier in the sentence, in which case a dynamic oracle
supplies the token.  Without an oracle the gold token is always the
alternative (classic scheduled sampling).

Decisions are pure functions of (state, coin, candidate tokens), so replaying
a recorded coin sequence reproduces a training run's feed choices exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Tuple

import numpy as np


class Branch(str, Enum):
    MODEL_ESTIMATE = "model_estimate"
    GOLD = "gold"
    ORACLE = "oracle"


@dataclass(frozen=True)
class FeedDecision:
    """Outcome of one feed choice: which token went in, and why."""

    step: int
    branch: Branch
    coin: float
    fed_token: int
    oracle_fallback: bool = False


@dataclass(frozen=True)
class SentenceFeedState:
    """Per-sentence record; reset at each new sentence."""

    used_estimate: bool = False
    history: Tuple[FeedDecision, ...] = field(default_factory=tuple)


def decide_feed(
    state: SentenceFeedState,
    t: int,
    gold_prev: int,
    model_prev: int,
    oracle,
    eps: float,
    rng: Optional[np.random.Generator] = None,
    coin: Optional[float] = None,
) -> Tuple[FeedDecision, SentenceFeedState]:
    """Choose the input token for decoding step ``t``.

    ``oracle`` is any object with ``propose_one() -> int | None`` whose state
    already reflects the tokens fed so far, or None when no oracle is
    configured.  A missing oracle candidate falls back to the gold token and
    flags the decision.  Pass ``coin`` to replay a recorded trace.
    """
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    if coin is None:
        if rng is None:
            raise ValueError("decide_feed needs an rng when no coin is given")
        coin = float(rng.random())

    fallback = False
    if coin < eps:
        branch, fed = Branch.MODEL_ESTIMATE, model_prev
    elif not state.used_estimate or oracle is None:
        branch, fed = Branch.GOLD, gold_prev
    else:
        token = oracle.propose_one()
        if token is None:
            branch, fed, fallback = Branch.GOLD, gold_prev, True
        else:
            branch, fed = Branch.ORACLE, int(token)

    decision = FeedDecision(step=t, branch=branch, coin=coin, fed_token=int(fed),
                            oracle_fallback=fallback)
    new_state = SentenceFeedState(
        used_estimate=state.used_estimate or branch is Branch.MODEL_ESTIMATE,
        history=state.history + (decision,),
    )
    return decision, new_state


class _StubOracle:
    """Always proposes the same token; used by the frequency simulator."""

    def __init__(self, token: int = 0):
        self.token = token

    def propose_one(self):
        return self.token


def simulate_branch_frequencies(
    eps: float, steps: int, rng: np.random.Generator
) -> dict:
    """Run ``steps`` feed decisions over one endless sentence; count branches."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    oracle = _StubOracle()
    state = SentenceFeedState()
    counts = {b: 0 for b in Branch}
    for t in range(1, steps + 1):
        decision, state = decide_feed(state, t, gold_prev=1, model_prev=2,
                                      oracle=oracle, eps=eps, rng=rng)
        counts[decision.branch] += 1
        # bound the history so long simulations stay O(1) per step
        if t % 1024 == 0:
            state = SentenceFeedState(used_estimate=state.used_estimate)
    return counts


def decision_record(sentence: int, decision: FeedDecision) -> dict:
    return {
        "sentence": sentence,
        "step": decision.step,
        "branch": decision.branch.value,
        "coin": decision.coin,
        "fed_token": decision.fed_token,
        "fallback": decision.oracle_fallback,
    }


def write_decision_trace(path, traces: Iterable[Tuple[int, Iterable[FeedDecision]]]) -> None:
    """Write decisions as line-delimited JSON records for audit."""
    with open(path, "a", encoding="utf-8") as fh:
        for sentence, decisions in traces:
            for d in decisions:
                fh.write(json.dumps(decision_record(sentence, d), sort_keys=True))
                fh.write("\n")
