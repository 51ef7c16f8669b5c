"""Case-insensitive 4-gram corpus BLEU with brevity penalty.

Modified n-gram precision clips each hypothesis n-gram count by its count in
the reference, aggregates counts over the corpus, and combines the four
precisions geometrically; hypotheses shorter than the references are
penalized by exp(1 - r/c).  Scores live in [0, 1] and are conventionally
reported x100.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import List, Sequence

MAX_ORDER = 4


@dataclass
class BleuReport:
    bleu: float
    precisions: List[float]
    brevity_penalty: float
    hypothesis_length: int
    reference_length: int

    @property
    def scaled(self) -> float:
        return 100.0 * self.bleu

    def summary(self) -> str:
        prec = "/".join(f"{100.0 * p:.1f}" for p in self.precisions)
        return (
            f"BLEU = {self.scaled:.2f} ({prec}) "
            f"BP = {self.brevity_penalty:.3f} "
            f"hyp_len = {self.hypothesis_length} ref_len = {self.reference_length}"
        )

    def to_dict(self) -> dict:
        return {
            "bleu": self.bleu,
            "bleu_x100": self.scaled,
            "precisions": self.precisions,
            "brevity_penalty": self.brevity_penalty,
            "hypothesis_length": self.hypothesis_length,
            "reference_length": self.reference_length,
        }


def sentence_ngrams(tokens: Sequence, n: int) -> Counter:
    """All contiguous n-grams with multiplicity; empty when len(tokens) < n."""
    if not 1 <= n <= MAX_ORDER:
        raise ValueError(f"n-gram order must lie in [1, {MAX_ORDER}], got {n}")
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


def _normalize(tokens: Sequence) -> List:
    return [t.lower() if isinstance(t, str) else t for t in tokens]


def corpus_bleu(hypotheses: Sequence[Sequence], references: Sequence[Sequence],
                smoothing: bool = False) -> BleuReport:
    """Corpus-level BLEU over single-reference pairs.

    String tokens are lowercased before counting.  ``smoothing`` applies
    add-one smoothing to every precision, for tiny dev sets where a zero
    count would null the whole score.
    """
    if len(hypotheses) != len(references):
        raise ValueError(
            f"got {len(hypotheses)} hypotheses but {len(references)} references"
        )
    if not hypotheses:
        raise ValueError("corpus_bleu requires a non-empty corpus")

    clipped = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp = _normalize(hyp)
        ref = _normalize(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            hyp_counts = sentence_ngrams(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = sentence_ngrams(ref, n)
            totals[n - 1] += sum(hyp_counts.values())
            clipped[n - 1] += sum(
                min(c, ref_counts.get(g, 0)) for g, c in hyp_counts.items()
            )

    if smoothing:
        precisions = [(c + 1) / (t + 1) for c, t in zip(clipped, totals)]
    else:
        precisions = [c / t if t else 0.0 for c, t in zip(clipped, totals)]

    if hyp_len == 0:
        return BleuReport(0.0, precisions, 0.0, hyp_len, ref_len)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    if any(p == 0.0 for p in precisions):
        bleu = 0.0
    else:
        bleu = bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuReport(bleu, precisions, bp, hyp_len, ref_len)
