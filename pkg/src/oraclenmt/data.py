"""Vocabulary construction, corpus ingestion, and synthetic task generation.

Corpus files are plain text, one whitespace-tokenized sentence per line, with
source and target files line-aligned.  Vocabularies reserve PAD=0, BOS=1,
EOS=2, UNK=3 and keep the most frequent remaining tokens.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .model import BOS_ID, EOS_ID, PAD_ID, UNK_ID

SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")
N_SPECIALS = len(SPECIAL_TOKENS)

Pair = Tuple[List[str], List[str]]
IdPair = Tuple[List[int], List[int]]


class Vocabulary:
    """Bidirectional token<->id map with reserved specials at ids 0-3."""

    def __init__(self, tokens: Sequence[str], frequencies: Optional[Sequence[int]] = None,
                 coverage: float = 1.0):
        self._id_to_token = list(SPECIAL_TOKENS) + list(tokens)
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise ConfigError("duplicate tokens in vocabulary")
        self._frequencies = list(frequencies) if frequencies is not None else [0] * len(tokens)
        self.coverage = coverage

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._id_to_token[idx]

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self._token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int], strip_specials: bool = False) -> List[str]:
        toks = [self._id_to_token[i] for i in ids]
        if strip_specials:
            toks = [t for t in toks if t not in SPECIAL_TOKENS]
        return toks

    def to_snapshot(self) -> dict:
        return {
            "tokens": self._id_to_token[N_SPECIALS:],
            "frequencies": self._frequencies,
            "coverage": self.coverage,
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "Vocabulary":
        return cls(snap["tokens"], snap.get("frequencies"), snap.get("coverage", 1.0))

    def save_text(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self._id_to_token:
                fh.write(tok + "\n")


def build_vocab(sentences: Sequence[Sequence[str]], max_size: int) -> Vocabulary:
    """Keep the ``max_size - 4`` most frequent tokens; ties break lexically."""
    if max_size <= N_SPECIALS:
        raise ConfigError(f"vocabulary size must exceed {N_SPECIALS}, got {max_size}")
    counts: Counter = Counter()
    total = 0
    for sent in sentences:
        counts.update(sent)
        total += len(sent)
    if total == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = ranked[: max_size - N_SPECIALS]
    covered = sum(c for _, c in kept)
    return Vocabulary(
        tokens=[t for t, _ in kept],
        frequencies=[c for _, c in kept],
        coverage=covered / total,
    )


def encode_sentence(tokens: Sequence[str], vocab: Vocabulary) -> List[int]:
    """Map tokens to ids, out-of-vocabulary tokens to UNK; no BOS/EOS added."""
    return vocab.encode(tokens)


def encode_pairs(pairs: Sequence[Pair], vocab_src: Vocabulary,
                 vocab_tgt: Vocabulary) -> List[IdPair]:
    return [(vocab_src.encode(s), vocab_tgt.encode(t)) for s, t in pairs]


# ---------------------------------------------------------------------------
# Corpus files
# ---------------------------------------------------------------------------

def read_parallel(src_path: str, tgt_path: str,
                  max_len: Optional[int] = None) -> List[Pair]:
    """Read aligned sentence files, dropping empty and over-long pairs."""
    with open(src_path, encoding="utf-8") as fh:
        src_lines = fh.read().splitlines()
    with open(tgt_path, encoding="utf-8") as fh:
        tgt_lines = fh.read().splitlines()
    if len(src_lines) != len(tgt_lines):
        raise ValueError(
            f"parallel files differ in length: {src_path} has {len(src_lines)} lines, "
            f"{tgt_path} has {len(tgt_lines)}"
        )
    pairs = []
    for s_line, t_line in zip(src_lines, tgt_lines):
        s, t = s_line.split(), t_line.split()
        if not s or not t:
            continue
        if max_len is not None and (len(s) > max_len or len(t) > max_len):
            continue
        pairs.append((s, t))
    return pairs


def write_parallel(out_dir: str, split: str, pairs: Sequence[Pair]) -> Tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    src_path = os.path.join(out_dir, f"{split}.src")
    tgt_path = os.path.join(out_dir, f"{split}.tgt")
    with open(src_path, "w", encoding="utf-8") as fs, \
            open(tgt_path, "w", encoding="utf-8") as ft:
        for s, t in pairs:
            fs.write(" ".join(s) + "\n")
            ft.write(" ".join(t) + "\n")
    return src_path, tgt_path


# ---------------------------------------------------------------------------
# Synthetic tasks
# ---------------------------------------------------------------------------

TASK_KINDS = ("copy", "reverse", "lexical_translate")

PHRASE_RATE = 0.10


@dataclass
class SyntheticTask:
    kind: str
    train: List[Pair]
    dev: List[Pair]
    test: List[Pair]
    mapping: Dict[str, Tuple[str, ...]] = field(default_factory=dict, repr=False)

    def splits(self) -> Dict[str, List[Pair]]:
        return {"train": self.train, "dev": self.dev, "test": self.test}


def _source_alphabet(vocab_size: int) -> List[str]:
    return [f"w{i:03d}" for i in range(vocab_size)]


def _lexical_mapping(vocab_size: int, seed: int) -> Dict[str, Tuple[str, ...]]:
    """Seeded bijection over types; a slice of types expands to 2-token phrases."""
    rng = np.random.default_rng([seed, 101])
    perm = rng.permutation(vocab_size)
    n_phrase = int(round(PHRASE_RATE * vocab_size))
    phrase_types = set(rng.choice(vocab_size, size=n_phrase, replace=False).tolist())
    mapping: Dict[str, Tuple[str, ...]] = {}
    next_phrase = 0
    for i, src_tok in enumerate(_source_alphabet(vocab_size)):
        tgt = f"v{perm[i]:03d}"
        if i in phrase_types:
            mapping[src_tok] = (tgt, f"p{next_phrase:03d}")
            next_phrase += 1
        else:
            mapping[src_tok] = (tgt,)
    return mapping


def _unique_sentences(rng: np.random.Generator, alphabet: List[str], count: int,
                      len_range: Tuple[int, int], taken: set) -> List[List[str]]:
    lo, hi = len_range
    if lo < 1 or hi < lo:
        raise ConfigError(f"bad length range {len_range}")
    sentences = []
    attempts = 0
    limit = 1000 * count + 1000
    while len(sentences) < count:
        attempts += 1
        if attempts > limit:
            raise ConfigError(
                f"cannot draw {count} distinct sentences of length {lo}..{hi} "
                f"over {len(alphabet)} types"
            )
        length = int(rng.integers(lo, hi + 1))
        sent = tuple(alphabet[i] for i in rng.integers(0, len(alphabet), size=length))
        if sent in taken:
            continue
        taken.add(sent)
        sentences.append(list(sent))
    return sentences


def _apply_task(kind: str, source: List[str],
                mapping: Dict[str, Tuple[str, ...]]) -> List[str]:
    if kind == "copy":
        return list(source)
    if kind == "reverse":
        return list(reversed(source))
    out: List[str] = []
    for tok in source:
        out.extend(mapping[tok])
    return out


def generate_synthetic_task(
    kind: str,
    vocab_size: int,
    n_pairs: int,
    len_range: Tuple[int, int] = (3, 10),
    seed: int = 0,
    test_len_range: Optional[Tuple[int, int]] = None,
) -> SyntheticTask:
    """Deterministic toy parallel corpus with disjoint train/dev/test splits.

    ``test_len_range`` replaces the test split with sentences drawn from a
    different length band (same token mapping), for length-generalization
    experiments.
    """
    if kind not in TASK_KINDS:
        raise ConfigError(f"unknown task kind {kind!r}; choose from {TASK_KINDS}")
    if vocab_size < 5:
        raise ConfigError(f"vocab_size must be >= 5, got {vocab_size}")
    if n_pairs < 1:
        raise ConfigError(f"n_pairs must be >= 1, got {n_pairs}")

    alphabet = _source_alphabet(vocab_size)
    mapping = _lexical_mapping(vocab_size, seed) if kind == "lexical_translate" else {}

    taken: set = set()
    rng = np.random.default_rng([seed, len_range[0], len_range[1]])
    sources = _unique_sentences(rng, alphabet, n_pairs, len_range, taken)

    n_hold = max(1, n_pairs // 20) if n_pairs >= 3 else 0
    dev_src = sources[:n_hold]
    test_src = sources[n_hold: 2 * n_hold]
    train_src = sources[2 * n_hold:]

    if test_len_range is not None:
        test_rng = np.random.default_rng([seed, test_len_range[0], test_len_range[1], 1])
        test_src = _unique_sentences(test_rng, alphabet, max(n_hold, 1),
                                     test_len_range, taken)

    def pairs_of(srcs):
        return [(s, _apply_task(kind, s, mapping)) for s in srcs]

    return SyntheticTask(
        kind=kind,
        train=pairs_of(train_src),
        dev=pairs_of(dev_src),
        test=pairs_of(test_src),
        mapping=mapping,
    )
