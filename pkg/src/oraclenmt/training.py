"""Mini-batch training: AdaGrad on the negative log-likelihood, with the
feed policy choosing each decoder input.

One step unrolls a padded batch through the decoder, deciding every fed
token per sentence (gold / model estimate / oracle), scores each position
against the per-mode target, averages over unpadded tokens, backpropagates
over a fresh tape, clips the global gradient norm, and applies AdaGrad.

Also trains the target-side language model and the teacher-forcing baseline
used as the frozen pretrained oracle.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .autodiff import Tape, Tensor
from . import autodiff as ad
from .decoding import greedy_decode_batch
from .errors import ConfigError, TrainingDiverged
from .evaluation import corpus_bleu
from .feed_policy import Branch, FeedDecision, SentenceFeedState, decide_feed
from .model import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    LanguageModelParameters,
    LmConfig,
    ModelConfig,
    ModelParameters,
    RnnLanguageModel,
    Seq2SeqModel,
)
from .schedules import SamplingSchedule, constant

IdPair = Tuple[List[int], List[int]]

ORACLE_KINDS = ("none", "lm", "pretrained")
LOSS_TARGET_MODES = ("gold", "oracle")


@dataclass
class TrainingConfig:
    batch_size: int = 32
    learning_rate: float = 0.3
    adagrad_epsilon: float = 1e-8
    epochs: int = 10
    schedule: SamplingSchedule = field(default_factory=lambda: constant(0.0))
    oracle_kind: str = "none"
    loss_target_mode: str = "gold"
    gradient_clip: float = 5.0
    seed: int = 0
    max_sentence_len: int = 50
    sample_estimates: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.gradient_clip <= 0:
            raise ConfigError(f"gradient_clip must be > 0, got {self.gradient_clip}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.oracle_kind not in ORACLE_KINDS:
            raise ConfigError(f"oracle_kind must be one of {ORACLE_KINDS}")
        if self.loss_target_mode not in LOSS_TARGET_MODES:
            raise ConfigError(f"loss_target_mode must be one of {LOSS_TARGET_MODES}")

    def describe(self) -> dict:
        d = asdict(self)
        d["schedule"] = self.schedule.describe()
        return d


class AdagradOptimizer:
    """AdaGrad with global-norm gradient clipping.

    Accumulators are nonnegative and nondecreasing; the update is
    theta -= lr * g / sqrt(G + eps) with G += g**2, after scaling all
    gradients by min(1, clip / ||g||).
    """

    def __init__(self, named_params: Dict[str, Tensor], learning_rate: float,
                 epsilon: float = 1e-8):
        self.params = dict(named_params)
        self.lr = learning_rate
        self.eps = epsilon
        self.accum = {name: np.zeros_like(t.data) for name, t in self.params.items()}

    def grad_norm(self) -> float:
        total = 0.0
        for t in self.params.values():
            if t.grad is not None:
                total += float(np.sum(t.grad * t.grad))
        return float(np.sqrt(total))

    def step(self, clip: float) -> float:
        """Apply one update; returns the post-clip gradient norm."""
        norm = self.grad_norm()
        scale = 1.0 if norm <= clip else clip / norm
        for name, t in self.params.items():
            if t.grad is None:
                continue
            kernels.adagrad_apply(
                t.data.ravel(), np.ascontiguousarray(t.grad).ravel(),
                self.accum[name].ravel(), self.lr, self.eps, scale,
            )
            t.grad = None
        return norm * scale


@dataclass
class EpochStats:
    epoch: int
    loss: float
    dev_bleu: Optional[float]
    branch_counts: Dict[str, int]
    oracle_fallbacks: int
    decoded_steps: int
    max_grad_norm: float
    wall_time: float

    def to_record(self) -> dict:
        return {
            "epoch": self.epoch,
            "loss": self.loss,
            "dev_bleu": self.dev_bleu,
            "branches": dict(self.branch_counts),
            "oracle_fallbacks": self.oracle_fallbacks,
            "decoded_steps": self.decoded_steps,
            "max_grad_norm": self.max_grad_norm,
            "wall_time": self.wall_time,
        }


@dataclass
class RunRecord:
    epochs: List[EpochStats] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].loss

    @property
    def final_dev_bleu(self) -> Optional[float]:
        return self.epochs[-1].dev_bleu

    def losses(self) -> List[float]:
        return [e.loss for e in self.epochs]

    def branch_totals(self) -> Dict[str, int]:
        totals: Dict[str, int] = {b.value: 0 for b in Branch}
        fallbacks = 0
        for e in self.epochs:
            for k, v in e.branch_counts.items():
                totals[k] = totals.get(k, 0) + v
            fallbacks += e.oracle_fallbacks
        totals["oracle_fallbacks"] = fallbacks
        return totals

    def write_jsonl(self, path: str) -> None:
        import json

        with open(path, "w", encoding="utf-8") as fh:
            for e in self.epochs:
                fh.write(json.dumps(e.to_record(), sort_keys=True) + "\n")


class PlateauDetector:
    """Fires when the tracked metric stops improving for ``patience`` checks."""

    def __init__(self, patience: int = 3, min_delta: float = 1e-4):
        self.patience = patience
        self.min_delta = min_delta
        self.best = -np.inf
        self.stale = 0

    def update(self, value: float) -> bool:
        if value > self.best + self.min_delta:
            self.best = value
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


# ---------------------------------------------------------------------------
# One training step
# ---------------------------------------------------------------------------

@dataclass
class StepPolicy:
    """Feed-policy context for a single mini-batch."""

    eps: float
    oracle: object = None          # batched oracle handle or None
    loss_target_mode: str = "gold"
    coin_rng: Optional[np.random.Generator] = None
    sample_estimates: bool = False
    gradient_clip: float = 5.0


def _pad_sources(sources: Sequence[Sequence[int]]):
    lengths = np.array([len(s) for s in sources], dtype=np.int64)
    src = np.full((len(sources), int(lengths.max())), PAD_ID, dtype=np.int64)
    for i, s in enumerate(sources):
        src[i, : len(s)] = s
    return src, lengths


def _sample_row(probs_row: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    return int(np.searchsorted(np.cumsum(probs_row), u, side="right"))


def train_step(
    batch: Sequence[IdPair],
    model: Seq2SeqModel,
    optimizer: AdagradOptimizer,
    policy: StepPolicy,
) -> Tuple[float, List[List[FeedDecision]], float]:
    """Run one mini-batch update; returns (loss, per-sentence decisions, grad norm)."""
    if not batch:
        raise ValueError("train_step requires a non-empty batch")
    sources = [p[0] for p in batch]
    targets = [list(p[1]) + [EOS_ID] for p in batch]  # gold surface + EOS
    surfaces = [p[1] for p in batch]
    n_sent = len(batch)
    m_len = np.array([len(t) for t in targets], dtype=np.int64)
    m_max = int(m_len.max())
    total_tokens = int(m_len.sum())

    oracle = policy.oracle
    rng = policy.coin_rng

    with Tape() as tape:
        src, src_lengths = _pad_sources(sources)
        enc = model.encode_batch(src, src_lengths)
        state = model.initial_decoder_state(enc)
        if oracle is not None:
            oracle.reset_batch(sources, surfaces)
            views = [oracle.sentence_view(b) for b in range(n_sent)]
        else:
            views = [None] * n_sent

        feed_states = [SentenceFeedState() for _ in range(n_sent)]
        decisions: List[List[FeedDecision]] = [[] for _ in range(n_sent)]
        step_logits: List[Tensor] = []
        prev_logits: Optional[np.ndarray] = None
        prev_argmax: Optional[np.ndarray] = None
        fed_prev: Optional[np.ndarray] = None

        for t in range(1, m_max + 1):
            if t >= 2 and oracle is not None:
                oracle.advance(fed_prev)
            fed = np.full(n_sent, PAD_ID, dtype=np.int64)
            for b in range(n_sent):
                if t > m_len[b]:
                    continue
                if t == 1:
                    gold_prev = BOS_ID
                    model_prev = BOS_ID
                    coin = float(rng.random())
                else:
                    gold_prev = targets[b][t - 2]
                    coin = float(rng.random())
                    if policy.sample_estimates and coin < policy.eps:
                        probs = kernels.softmax_rows(prev_logits[b: b + 1])[0]
                        model_prev = _sample_row(probs, rng)
                    else:
                        model_prev = int(prev_argmax[b])
                decision, feed_states[b] = decide_feed(
                    feed_states[b], t, gold_prev, model_prev, views[b],
                    policy.eps, coin=coin,
                )
                decisions[b].append(decision)
                fed[b] = decision.fed_token
                if decision.branch is Branch.ORACLE and oracle is not None:
                    oracle.consume(b, decision.fed_token)
            logits, state, _ = model.decode_step_batch(state, fed, enc)
            step_logits.append(logits)
            prev_logits = logits.data
            prev_argmax = np.argmax(prev_logits, axis=1)
            fed_prev = fed

        # assemble per-step targets; oracle-substituted mode rewrites the
        # reference position that an oracle token was fed for
        target_matrix = np.full((n_sent, m_max), PAD_ID, dtype=np.int64)
        for b in range(n_sent):
            target_matrix[b, : m_len[b]] = targets[b]
        if policy.loss_target_mode == "oracle":
            for b in range(n_sent):
                for d in decisions[b]:
                    if d.branch is Branch.ORACLE:
                        target_matrix[b, d.step - 2] = d.fed_token

        mask = (np.arange(m_max)[None, :] < m_len[:, None]).astype(np.float64)
        total = Tensor(0.0)
        raw_losses = np.zeros((n_sent, m_max))
        for t in range(m_max):
            losses = ad.softmax_cross_entropy(step_logits[t], target_matrix[:, t])
            raw_losses[:, t] = losses.data
            masked = ad.mul(losses, Tensor(mask[:, t]))
            total = ad.add(total, ad.tensor_sum(masked))
        loss = ad.mul(total, 1.0 / total_tokens)

        if not np.isfinite(loss.item()):
            bad = np.argwhere(~np.isfinite(raw_losses * mask))
            b, t = (int(bad[0][0]), int(bad[0][1]) + 1) if len(bad) else (-1, -1)
            raise TrainingDiverged(
                f"non-finite loss (sentence {b}, step {t}) — aborting run"
            )
        tape.backward(loss)

    grad_norm = optimizer.step(clip=policy.gradient_clip)
    return loss.item(), decisions, grad_norm


# ---------------------------------------------------------------------------
# Full training runs
# ---------------------------------------------------------------------------

def _iter_batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start: start + batch_size]


def _filter_pairs(pairs: Sequence[IdPair], max_len: int) -> List[IdPair]:
    return [
        (s, t) for s, t in pairs
        if 0 < len(s) <= max_len and 0 < len(t) <= max_len
    ]


def _dev_bleu(model: Seq2SeqModel, dev_pairs: Sequence[IdPair]) -> float:
    hyps = greedy_decode_batch(model, [p[0] for p in dev_pairs])
    return corpus_bleu(hyps, [p[1] for p in dev_pairs]).bleu


def train_model(
    pairs: Sequence[IdPair],
    model: Seq2SeqModel,
    config: TrainingConfig,
    oracle=None,
    dev_pairs: Optional[Sequence[IdPair]] = None,
    plateau: Optional[PlateauDetector] = None,
    trace_path: Optional[str] = None,
) -> RunRecord:
    """Train ``model`` in place; returns the per-epoch record.

    The sampling schedule is evaluated once per mini-batch at progress
    ``completed_updates / planned_updates``.  ``oracle`` must match
    ``config.oracle_kind``; decisions can be streamed to ``trace_path`` as
    line-delimited JSON.
    """
    pairs = _filter_pairs(pairs, config.max_sentence_len)
    if not pairs:
        raise ValueError("no usable training pairs after filtering")
    if (oracle is None) != (config.oracle_kind == "none"):
        raise ConfigError(
            f"oracle_kind={config.oracle_kind!r} inconsistent with oracle={oracle!r}"
        )

    shuffle_rng = np.random.default_rng([config.seed, 1])
    coin_rng = np.random.default_rng([config.seed, 2])
    optimizer = AdagradOptimizer(model.params.named(), config.learning_rate,
                                 config.adagrad_epsilon)

    n_batches = (len(pairs) + config.batch_size - 1) // config.batch_size
    planned = config.epochs * n_batches
    completed = 0
    record = RunRecord()
    trace_fh = open(trace_path, "w", encoding="utf-8") if trace_path else None
    import json as _json

    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            order = shuffle_rng.permutation(len(pairs))
            epoch_loss = 0.0
            epoch_tokens = 0
            counts = {b.value: 0 for b in Branch}
            fallbacks = 0
            decoded_steps = 0
            max_norm = 0.0
            for idx in _iter_batches(len(pairs), config.batch_size, order):
                batch = [pairs[i] for i in idx]
                eps = config.schedule.value(completed / planned)
                policy = StepPolicy(
                    eps=eps, oracle=oracle,
                    loss_target_mode=config.loss_target_mode,
                    coin_rng=coin_rng, sample_estimates=config.sample_estimates,
                    gradient_clip=config.gradient_clip,
                )
                loss, decisions, norm = train_step(batch, model, optimizer, policy)
                completed += 1
                batch_tokens = sum(len(t) + 1 for _, t in batch)
                epoch_loss += loss * batch_tokens
                epoch_tokens += batch_tokens
                max_norm = max(max_norm, norm)
                for b, sent_decisions in enumerate(decisions):
                    decoded_steps += len(sent_decisions)
                    for d in sent_decisions:
                        if d.oracle_fallback:
                            fallbacks += 1
                        else:
                            counts[d.branch.value] += 1
                    if trace_fh is not None:
                        for d in sent_decisions:
                            trace_fh.write(_json.dumps({
                                "epoch": epoch, "sentence": int(idx[b]),
                                "step": d.step, "branch": d.branch.value,
                                "coin": d.coin, "fed_token": d.fed_token,
                                "fallback": d.oracle_fallback,
                            }, sort_keys=True) + "\n")

            dev_bleu = _dev_bleu(model, dev_pairs) if dev_pairs else None
            record.epochs.append(EpochStats(
                epoch=epoch,
                loss=epoch_loss / epoch_tokens,
                dev_bleu=dev_bleu,
                branch_counts=counts,
                oracle_fallbacks=fallbacks,
                decoded_steps=decoded_steps,
                max_grad_norm=max_norm,
                wall_time=time.perf_counter() - t0,
            ))
            if plateau is not None and dev_bleu is not None and plateau.update(dev_bleu):
                record.stopped_early = True
                break
    finally:
        if trace_fh is not None:
            trace_fh.close()
    return record


def pretrain_baseline(
    pairs: Sequence[IdPair],
    model_config: ModelConfig,
    config: TrainingConfig,
    dev_pairs: Optional[Sequence[IdPair]] = None,
    patience: int = 3,
) -> Tuple[ModelParameters, RunRecord]:
    """Teacher-forcing baseline trained until the dev BLEU plateaus."""
    from dataclasses import replace

    tf_config = replace(config, schedule=constant(0.0), oracle_kind="none")
    params = ModelParameters.init(model_config, tf_config.seed)
    model = Seq2SeqModel(params)
    plateau = PlateauDetector(patience=patience) if dev_pairs else None
    record = train_model(pairs, model, tf_config, oracle=None,
                         dev_pairs=dev_pairs, plateau=plateau)
    return params, record


# ---------------------------------------------------------------------------
# Language model training
# ---------------------------------------------------------------------------

def lm_perplexity(lm: RnnLanguageModel, sentences: Sequence[Sequence[int]]) -> float:
    """exp(mean per-token NLL), teacher-forced, EOS included."""
    total_nll = 0.0
    total_tokens = 0
    for batch_start in range(0, len(sentences), 64):
        chunk = sentences[batch_start: batch_start + 64]
        inputs = [[BOS_ID] + list(s) for s in chunk]
        outputs = [list(s) + [EOS_ID] for s in chunk]
        lengths = np.array([len(o) for o in outputs])
        m_max = int(lengths.max())
        hidden = lm.initial_hidden(len(chunk))
        for t in range(m_max):
            fed = np.array(
                [inp[t] if t < len(inp) else PAD_ID for inp in inputs], dtype=np.int64
            )
            tgt = np.array(
                [out[t] if t < len(out) else PAD_ID for out in outputs], dtype=np.int64
            )
            logits, hidden = lm.step_batch(hidden, fed)
            losses, _ = kernels.xent_forward(logits.data, tgt)
            live = t < lengths
            total_nll += float(losses[live].sum())
            total_tokens += int(live.sum())
    return float(np.exp(total_nll / max(1, total_tokens)))


def train_lm(
    sentences: Sequence[Sequence[int]],
    lm_config: LmConfig,
    config: TrainingConfig,
    dev_sentences: Optional[Sequence[Sequence[int]]] = None,
) -> Tuple[LanguageModelParameters, List[dict]]:
    """Teacher-forced next-token training; reports held-out perplexity.

    Without an explicit dev set, 5% of the corpus (at least one sentence) is
    held out.
    """
    sentences = [s for s in sentences if 0 < len(s) <= config.max_sentence_len]
    if not sentences:
        raise ValueError("no usable sentences for LM training")
    if dev_sentences is None:
        split_rng = np.random.default_rng([config.seed, 3])
        order = split_rng.permutation(len(sentences))
        n_dev = max(1, len(sentences) // 20)
        if len(sentences) == 1:
            dev_sentences = [sentences[0]]
        else:
            dev_sentences = [sentences[i] for i in order[:n_dev]]
            sentences = [sentences[i] for i in order[n_dev:]]

    params = LanguageModelParameters.init(lm_config, config.seed)
    lm = RnnLanguageModel(params)
    optimizer = AdagradOptimizer(params.named(), config.learning_rate,
                                 config.adagrad_epsilon)
    shuffle_rng = np.random.default_rng([config.seed, 4])
    history: List[dict] = []

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(sentences))
        epoch_loss = 0.0
        epoch_tokens = 0
        for idx in _iter_batches(len(sentences), config.batch_size, order):
            chunk = [sentences[i] for i in idx]
            inputs = [[BOS_ID] + list(s) for s in chunk]
            outputs = [list(s) + [EOS_ID] for s in chunk]
            lengths = np.array([len(o) for o in outputs], dtype=np.int64)
            m_max = int(lengths.max())
            total_tokens = int(lengths.sum())
            mask = (np.arange(m_max)[None, :] < lengths[:, None]).astype(np.float64)
            with Tape() as tape:
                hidden = lm.initial_hidden(len(chunk))
                total = Tensor(0.0)
                for t in range(m_max):
                    fed = np.array(
                        [inp[t] if t < len(inp) else PAD_ID for inp in inputs],
                        dtype=np.int64,
                    )
                    tgt = np.array(
                        [out[t] if t < len(out) else PAD_ID for out in outputs],
                        dtype=np.int64,
                    )
                    logits, hidden = lm.step_batch(hidden, fed)
                    losses = ad.softmax_cross_entropy(logits, tgt)
                    total = ad.add(total, ad.tensor_sum(ad.mul(losses, Tensor(mask[:, t]))))
                loss = ad.mul(total, 1.0 / total_tokens)
                if not np.isfinite(loss.item()):
                    raise TrainingDiverged("non-finite LM loss — aborting run")
                tape.backward(loss)
            optimizer.step(clip=config.gradient_clip)
            epoch_loss += loss.item() * total_tokens
            epoch_tokens += total_tokens
        ppl = lm_perplexity(lm, dev_sentences)
        history.append({
            "epoch": epoch,
            "loss": epoch_loss / epoch_tokens,
            "dev_ppl": ppl,
            "wall_time": time.perf_counter() - t0,
        })
    return params, history
