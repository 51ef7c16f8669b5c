"""The four-way system comparison: baseline / SS / SS+LM / SS+PRE.

For each requested seed the runner trains the teacher-forcing baseline (also
reused as the frozen oracle for SS+PRE), the target-side language model when
SS+LM is requested, and each scheduled-sampling variant, then evaluates every
system on every test split with beam decoding and assembles a BLEU table
(systems x test sets + AVG) plus branch statistics and the effective config.
"""

from __future__ import annotations

import json
import os
import time
import traceback
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .checkpoint import config_fingerprint
from .data import (
    SyntheticTask,
    Vocabulary,
    build_vocab,
    encode_pairs,
    generate_synthetic_task,
)
from .decoding import beam_decode
from .errors import ConfigError
from .evaluation import corpus_bleu
from .model import LmConfig, ModelConfig, ModelParameters, Seq2SeqModel
from .oracles import LanguageModelOracle, PretrainedModelOracle
from .schedules import SamplingSchedule
from .training import RunRecord, TrainingConfig, pretrain_baseline, train_lm, train_model

SYSTEMS = ("baseline", "SS", "SS+LM", "SS+PRE")


@dataclass
class ExperimentSpec:
    task: str = "reverse"
    vocab_size: int = 50
    pairs: int = 5000
    len_range: Tuple[int, int] = (3, 10)
    test_len_range: Optional[Tuple[int, int]] = None
    corpus_seed: int = 0
    d_emb: int = 32
    d_hid: int = 64
    max_vocab: int = 200
    batch_size: int = 32
    learning_rate: float = 0.05
    epochs: int = 15
    lm_epochs: int = 5
    gradient_clip: float = 5.0
    adagrad_epsilon: float = 1e-8
    schedule_kind: str = "linear"
    schedule_params: Dict[str, float] = field(default_factory=lambda: {"k": 0.25})
    loss_target_mode: str = "gold"
    beam: int = 5
    systems: Tuple[str, ...] = SYSTEMS
    seeds: Tuple[int, ...] = (1,)
    out_dir: Optional[str] = None
    max_sentence_len: int = 50

    def __post_init__(self):
        for system in self.systems:
            if system not in SYSTEMS:
                raise ConfigError(f"unknown system {system!r}; choose from {SYSTEMS}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.beam < 1:
            raise ConfigError(f"beam must be >= 1, got {self.beam}")

    def schedule(self) -> SamplingSchedule:
        return SamplingSchedule(self.schedule_kind, self.schedule_params)

    def to_dict(self) -> dict:
        d = {
            "task": self.task,
            "vocab_size": self.vocab_size,
            "pairs": self.pairs,
            "len_range": list(self.len_range),
            "test_len_range": list(self.test_len_range) if self.test_len_range else None,
            "corpus_seed": self.corpus_seed,
            "d_emb": self.d_emb,
            "d_hid": self.d_hid,
            "max_vocab": self.max_vocab,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "lm_epochs": self.lm_epochs,
            "gradient_clip": self.gradient_clip,
            "adagrad_epsilon": self.adagrad_epsilon,
            "schedule": {"kind": self.schedule_kind, "params": dict(self.schedule_params)},
            "loss_target_mode": self.loss_target_mode,
            "beam": self.beam,
            "systems": list(self.systems),
            "seeds": list(self.seeds),
            "max_sentence_len": self.max_sentence_len,
        }
        return d

    def fingerprint(self) -> str:
        return config_fingerprint(self.to_dict())


@dataclass
class CellResult:
    system: str
    seed: int
    bleu: Dict[str, float] = field(default_factory=dict)   # split -> BLEU in [0, 1]
    branch_totals: Dict[str, int] = field(default_factory=dict)
    epochs_run: int = 0
    failed: bool = False
    error: Optional[str] = None

    @property
    def avg(self) -> Optional[float]:
        if self.failed or not self.bleu:
            return None
        return float(np.mean(list(self.bleu.values())))


@dataclass
class ComparisonReport:
    spec: dict
    fingerprint: str
    test_sets: List[str]
    cells: List[CellResult]

    def systems(self) -> List[str]:
        seen: List[str] = []
        for c in self.cells:
            if c.system not in seen:
                seen.append(c.system)
        return seen

    def cell(self, system: str, seed: int) -> Optional[CellResult]:
        for c in self.cells:
            if c.system == system and c.seed == seed:
                return c
        return None

    def mean_bleu(self, system: str, split: Optional[str] = None) -> Optional[float]:
        vals = []
        for c in self.cells:
            if c.system != system or c.failed:
                continue
            vals.append(c.avg if split is None else c.bleu.get(split))
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def any_failures(self) -> bool:
        return any(c.failed for c in self.cells)

    def to_dict(self) -> dict:
        return {
            "config": self.spec,
            "config_fingerprint": self.fingerprint,
            "test_sets": self.test_sets,
            "cells": [
                {
                    "system": c.system,
                    "seed": c.seed,
                    "bleu_x100": {k: 100.0 * v for k, v in sorted(c.bleu.items())},
                    "avg_x100": 100.0 * c.avg if c.avg is not None else None,
                    "branches": dict(sorted(c.branch_totals.items())),
                    "epochs_run": c.epochs_run,
                    "failed": c.failed,
                    "error": c.error,
                }
                for c in self.cells
            ],
            "means_x100": {
                system: {
                    "splits": {
                        split: (100.0 * m if (m := self.mean_bleu(system, split)) is not None else None)
                        for split in self.test_sets
                    },
                    "avg": (100.0 * m if (m := self.mean_bleu(system)) is not None else None),
                }
                for system in self.systems()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_text(self) -> str:
        lines = []
        multi_seed = len({c.seed for c in self.cells}) > 1
        width = max(len(s) for s in self.systems() + ["system"]) + 2
        header = "system".ljust(width) + "".join(f"{t:>12}" for t in self.test_sets) + f"{'AVG':>12}"
        lines.append(header)
        lines.append("-" * len(header))
        for system in self.systems():
            row = system.ljust(width)
            for split in self.test_sets:
                m = self.mean_bleu(system, split)
                row += f"{100.0 * m:>12.2f}" if m is not None else f"{'failed':>12}"
            m = self.mean_bleu(system)
            row += f"{100.0 * m:>12.2f}" if m is not None else f"{'failed':>12}"
            lines.append(row)
        if multi_seed:
            lines.append("")
            lines.append("per-seed AVG:")
            for c in self.cells:
                mark = "FAILED" if c.failed else f"{100.0 * c.avg:.2f}"
                lines.append(f"  {c.system} seed={c.seed}: {mark}")
        return "\n".join(lines)


def _evaluate(model: Seq2SeqModel, splits: Dict[str, list], vocab_tgt: Vocabulary,
              refs: Dict[str, list], beam: int) -> Dict[str, float]:
    out = {}
    for name, pairs in splits.items():
        hyps = [vocab_tgt.decode(beam_decode(model, src, beam).surface) for src, _ in pairs]
        out[name] = corpus_bleu(hyps, refs[name]).bleu
    return out


def run_experiment(spec: ExperimentSpec, log=print) -> ComparisonReport:
    """Train and evaluate every requested (system, seed) cell.

    A failing cell is recorded with its error and the remaining cells still
    run.  When ``spec.out_dir`` is set, ``report.json``, ``report.txt`` and
    per-run records land there.
    """
    task = generate_synthetic_task(
        spec.task, spec.vocab_size, spec.pairs, spec.len_range,
        seed=spec.corpus_seed, test_len_range=spec.test_len_range,
    )
    vocab_src = build_vocab([s for s, _ in task.train], spec.max_vocab)
    vocab_tgt = build_vocab([t for _, t in task.train], spec.max_vocab)
    train = encode_pairs(task.train, vocab_src, vocab_tgt)
    dev = encode_pairs(task.dev, vocab_src, vocab_tgt)
    test_sets = {"test": encode_pairs(task.test, vocab_src, vocab_tgt)}
    test_refs = {"test": [t for _, t in task.test]}

    model_config = ModelConfig(vocab_src=len(vocab_src), vocab_tgt=len(vocab_tgt),
                               d_emb=spec.d_emb, d_hid=spec.d_hid)
    base_train_config = TrainingConfig(
        batch_size=spec.batch_size,
        learning_rate=spec.learning_rate,
        adagrad_epsilon=spec.adagrad_epsilon,
        epochs=spec.epochs,
        gradient_clip=spec.gradient_clip,
        loss_target_mode=spec.loss_target_mode,
        max_sentence_len=spec.max_sentence_len,
    )
    schedule = spec.schedule()

    cells: List[CellResult] = []
    records: List[Tuple[str, int, RunRecord]] = []

    need_baseline = any(s in spec.systems for s in ("baseline", "SS+PRE"))
    need_lm = "SS+LM" in spec.systems

    for seed in spec.seeds:
        seed_cfg = replace(base_train_config, seed=seed)
        baseline_params = None
        lm_params = None

        if need_baseline:
            log(f"[seed {seed}] training teacher-forcing baseline")
            t0 = time.perf_counter()
            try:
                baseline_params, record = pretrain_baseline(
                    train, model_config, seed_cfg, dev_pairs=dev
                )
                records.append(("baseline", seed, record))
                if "baseline" in spec.systems:
                    model = Seq2SeqModel(baseline_params)
                    cell = CellResult("baseline", seed,
                                      bleu=_evaluate(model, test_sets, vocab_tgt,
                                                     test_refs, spec.beam),
                                      branch_totals=record.branch_totals(),
                                      epochs_run=len(record.epochs))
                    cells.append(cell)
                    log(f"[seed {seed}] baseline done in {time.perf_counter() - t0:.0f}s "
                        f"(epochs={len(record.epochs)})")
            except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
                log(f"[seed {seed}] baseline FAILED: {exc}")
                traceback.print_exc()
                if "baseline" in spec.systems:
                    cells.append(CellResult("baseline", seed, failed=True, error=str(exc)))
                baseline_params = None

        if need_lm:
            log(f"[seed {seed}] training target-side language model")
            try:
                lm_params, _ = train_lm(
                    [t for _, t in train],
                    LmConfig(vocab=len(vocab_tgt), d_emb=spec.d_emb, d_hid=spec.d_hid),
                    replace(seed_cfg, epochs=spec.lm_epochs),
                    dev_sentences=[t for _, t in dev],
                )
            except Exception as exc:  # noqa: BLE001
                log(f"[seed {seed}] LM pretraining FAILED: {exc}")
                traceback.print_exc()
                lm_params = None

        for system in spec.systems:
            if system == "baseline":
                continue
            t0 = time.perf_counter()
            try:
                if system == "SS":
                    oracle, kind = None, "none"
                elif system == "SS+LM":
                    if lm_params is None:
                        raise RuntimeError("LM pretraining failed; cannot run SS+LM")
                    oracle, kind = LanguageModelOracle(lm_params), "lm"
                elif system == "SS+PRE":
                    if baseline_params is None:
                        raise RuntimeError("baseline pretraining failed; cannot run SS+PRE")
                    oracle, kind = PretrainedModelOracle(baseline_params), "pretrained"
                log(f"[seed {seed}] training {system}")
                cfg = replace(seed_cfg, schedule=schedule, oracle_kind=kind)
                params = ModelParameters.init(model_config, seed)
                model = Seq2SeqModel(params)
                record = train_model(train, model, cfg, oracle=oracle, dev_pairs=dev)
                records.append((system, seed, record))
                cells.append(CellResult(
                    system, seed,
                    bleu=_evaluate(model, test_sets, vocab_tgt, test_refs, spec.beam),
                    branch_totals=record.branch_totals(),
                    epochs_run=len(record.epochs),
                ))
                log(f"[seed {seed}] {system} done in {time.perf_counter() - t0:.0f}s")
            except Exception as exc:  # noqa: BLE001
                log(f"[seed {seed}] {system} FAILED: {exc}")
                traceback.print_exc()
                cells.append(CellResult(system, seed, failed=True, error=str(exc)))

    ordered = [c for system in spec.systems for c in cells if c.system == system]
    report = ComparisonReport(
        spec=spec.to_dict(),
        fingerprint=spec.fingerprint(),
        test_sets=sorted(test_sets),
        cells=ordered,
    )

    if spec.out_dir:
        os.makedirs(spec.out_dir, exist_ok=True)
        with open(os.path.join(spec.out_dir, "report.json"), "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
        with open(os.path.join(spec.out_dir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.to_text() + "\n")
        with open(os.path.join(spec.out_dir, "runs.jsonl"), "w", encoding="utf-8") as fh:
            for system, seed, record in records:
                for e in record.epochs:
                    row = {"system": system, "seed": seed}
                    row.update(e.to_record())
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
    return report
