"""Command-line surface.

Subcommands: gen-data, pretrain-lm, pretrain-baseline, train, translate,
evaluate, experiment.  A JSON config file (--config) supplies defaults that
explicit flags override; every report echoes the effective configuration.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 partial
experiment failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from typing import List, Optional, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .data import (
    build_vocab,
    encode_pairs,
    generate_synthetic_task,
    read_parallel,
    write_parallel,
)
from .decoding import beam_decode, greedy_decode_batch
from .errors import CheckpointError, ConfigError, TrainingDiverged
from .evaluation import corpus_bleu
from .experiment import SYSTEMS, ExperimentSpec, run_experiment
from .model import LmConfig, ModelConfig, ModelParameters, Seq2SeqModel
from .oracles import LanguageModelOracle, PretrainedModelOracle
from .schedules import KINDS as SCHEDULE_KINDS
from .schedules import SamplingSchedule
from .training import TrainingConfig, pretrain_baseline, train_lm, train_model

USAGE_EXIT = 1
RUNTIME_EXIT = 2
PARTIAL_EXIT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(USAGE_EXIT)


def _schedule_from_args(kind: str, raw_params: Optional[List[str]]) -> SamplingSchedule:
    params = {}
    for item in raw_params or []:
        if "=" not in item:
            raise ConfigError(f"--schedule-param expects k=v, got {item!r}")
        key, value = item.split("=", 1)
        params[key.strip()] = float(value)
    return SamplingSchedule(kind.replace("-", "_"), params)


def _load_config_overlay(args: argparse.Namespace, parser_defaults: dict) -> None:
    """Fill unset flags from the JSON config file, if one was given."""
    path = getattr(args, "config", None)
    if not path:
        return
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ConfigError(f"unknown config key {key!r}")
        if getattr(args, attr) == parser_defaults.get(attr):
            setattr(args, attr, value)


def _read_lines(path: str) -> List[List[str]]:
    if path == "-":
        data = sys.stdin.read()
    else:
        with open(path, encoding="utf-8") as fh:
            data = fh.read()
    return [line.split() for line in data.splitlines()]


def _write_lines(path: str, sentences: Sequence[Sequence[str]]) -> None:
    text = "\n".join(" ".join(s) for s in sentences)
    if sentences:
        text += "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _training_config(args, schedule=None, oracle_kind="none") -> TrainingConfig:
    return TrainingConfig(
        batch_size=args.batch_size,
        learning_rate=args.lr,
        epochs=args.epochs,
        schedule=schedule if schedule is not None else SamplingSchedule("constant", {"eps": 0.0}),
        oracle_kind=oracle_kind,
        loss_target_mode=getattr(args, "loss_target", "gold"),
        gradient_clip=args.clip,
        seed=args.seed,
        max_sentence_len=args.max_len,
    )


def _add_common_training_flags(p: _Parser):
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--max-len", type=int, default=50)
    p.add_argument("--d-emb", type=int, default=32)
    p.add_argument("--d-hid", type=int, default=64)
    p.add_argument("--max-vocab", type=int, default=200)


def _load_data_dir(args):
    train = read_parallel(f"{args.data}/train.src", f"{args.data}/train.tgt", args.max_len)
    dev = read_parallel(f"{args.data}/dev.src", f"{args.data}/dev.tgt", args.max_len)
    vocab_src = build_vocab([s for s, _ in train], args.max_vocab)
    vocab_tgt = build_vocab([t for _, t in train], args.max_vocab)
    return train, dev, vocab_src, vocab_tgt


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.pairs < 1:
        raise ConfigError(f"--pairs must be >= 1, got {args.pairs}")
    test_range = None
    if args.test_min_len is not None or args.test_max_len is not None:
        if args.test_min_len is None or args.test_max_len is None:
            raise ConfigError("--test-min-len and --test-max-len must be given together")
        test_range = (args.test_min_len, args.test_max_len)
    task = generate_synthetic_task(
        args.task.replace("-", "_"), args.vocab_size, args.pairs,
        (args.min_len, args.max_len_gen), seed=args.seed, test_len_range=test_range,
    )
    for split, pairs in task.splits().items():
        src, tgt = write_parallel(args.out, split, pairs)
        print(f"wrote {len(pairs):6d} pairs -> {src} {tgt}")
    meta = {
        "task": task.kind, "vocab_size": args.vocab_size, "pairs": args.pairs,
        "len_range": [args.min_len, args.max_len_gen],
        "test_len_range": list(test_range) if test_range else None,
        "seed": args.seed,
    }
    with open(f"{args.out}/meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return 0


def cmd_pretrain_lm(args) -> int:
    train, dev, _, vocab_tgt = _load_data_dir(args)
    config = _training_config(args)
    lm_config = LmConfig(vocab=len(vocab_tgt), d_emb=args.d_emb, d_hid=args.d_hid)
    params, history = train_lm(
        [vocab_tgt.encode(t) for _, t in train], lm_config, config,
        dev_sentences=[vocab_tgt.encode(t) for _, t in dev],
    )
    for h in history:
        print(f"epoch {h['epoch']:3d}  loss {h['loss']:.4f}  held-out ppl {h['dev_ppl']:.4f}")
    ckpt = ckpt_io.lm_to_checkpoint(params, vocab_tgt, seed=args.seed)
    ckpt_io.save_checkpoint(args.out, ckpt)
    print(f"saved LM checkpoint -> {args.out}")
    print(f"final held-out perplexity: {history[-1]['dev_ppl']:.4f}")
    return 0


def cmd_pretrain_baseline(args) -> int:
    train, dev, vocab_src, vocab_tgt = _load_data_dir(args)
    config = _training_config(args)
    model_config = ModelConfig(vocab_src=len(vocab_src), vocab_tgt=len(vocab_tgt),
                               d_emb=args.d_emb, d_hid=args.d_hid)
    params, record = pretrain_baseline(
        encode_pairs(train, vocab_src, vocab_tgt), model_config, config,
        dev_pairs=encode_pairs(dev, vocab_src, vocab_tgt),
    )
    for e in record.epochs:
        print(f"epoch {e.epoch:3d}  loss {e.loss:.4f}  dev BLEU {100.0 * e.dev_bleu:.2f}")
    if record.stopped_early:
        print("stopped: dev BLEU plateau")
    ckpt = ckpt_io.model_to_checkpoint(params, vocab_src, vocab_tgt, seed=args.seed)
    ckpt_io.save_checkpoint(args.out, ckpt)
    print(f"saved baseline checkpoint -> {args.out}")
    return 0


def cmd_train(args) -> int:
    train, dev, vocab_src, vocab_tgt = _load_data_dir(args)
    schedule = _schedule_from_args(args.schedule, args.schedule_param)
    config = _training_config(args, schedule=schedule, oracle_kind=args.oracle)
    train_ids = encode_pairs(train, vocab_src, vocab_tgt)
    dev_ids = encode_pairs(dev, vocab_src, vocab_tgt)

    oracle = None
    if args.oracle == "lm":
        if not args.lm_checkpoint:
            raise ConfigError("--oracle lm requires --lm-checkpoint")
        lm_params, _ = ckpt_io.lm_from_checkpoint(ckpt_io.load_checkpoint(args.lm_checkpoint))
        oracle = LanguageModelOracle(lm_params)
    elif args.oracle == "pretrained":
        if not args.pretrained_checkpoint:
            raise ConfigError("--oracle pretrained requires --pretrained-checkpoint")
        base_params, _, _ = ckpt_io.model_from_checkpoint(
            ckpt_io.load_checkpoint(args.pretrained_checkpoint))
        oracle = PretrainedModelOracle(base_params)

    model_config = ModelConfig(vocab_src=len(vocab_src), vocab_tgt=len(vocab_tgt),
                               d_emb=args.d_emb, d_hid=args.d_hid)
    model = Seq2SeqModel(ModelParameters.init(model_config, args.seed))
    record = train_model(train_ids, model, config, oracle=oracle,
                         dev_pairs=dev_ids, trace_path=args.trace)
    for e in record.epochs:
        dev_str = f"{100.0 * e.dev_bleu:.2f}" if e.dev_bleu is not None else "n/a"
        print(f"epoch {e.epoch:3d}  loss {e.loss:.4f}  dev BLEU {dev_str}  "
              f"branches {e.branch_counts}  fallbacks {e.oracle_fallbacks}")
    ckpt = ckpt_io.model_to_checkpoint(model.params, vocab_src, vocab_tgt, seed=args.seed)
    ckpt_io.save_checkpoint(args.out, ckpt)
    print(f"saved checkpoint -> {args.out}")
    if args.run_record:
        record.write_jsonl(args.run_record)
        print(f"wrote run record -> {args.run_record}")
    return 0


def cmd_translate(args) -> int:
    ckpt = ckpt_io.load_checkpoint(args.checkpoint)
    params, vocab_src, vocab_tgt = ckpt_io.model_from_checkpoint(ckpt)
    if vocab_src is None or vocab_tgt is None:
        raise CheckpointError(f"{args.checkpoint}: checkpoint lacks vocabulary snapshots")
    model = Seq2SeqModel(params)
    sources = [vocab_src.encode(s) for s in _read_lines(args.input)]
    outputs = []
    for src in sources:
        if not src:
            outputs.append([])
        elif args.beam == 1:
            outputs.append(vocab_tgt.decode(greedy_decode_batch(model, [src])[0]))
        else:
            outputs.append(vocab_tgt.decode(beam_decode(model, src, args.beam).surface))
    _write_lines(args.output, outputs)
    return 0


def cmd_evaluate(args) -> int:
    hyps = _read_lines(args.hyp)
    refs = _read_lines(args.ref)
    report = corpus_bleu(hyps, refs, smoothing=args.smooth)
    if args.json:
        print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    else:
        print(report.summary())
        print(f"{report.scaled:.2f}")
    return 0


def cmd_experiment(args) -> int:
    schedule = _schedule_from_args(args.schedule, args.schedule_param)
    test_range = None
    if args.test_min_len is not None and args.test_max_len is not None:
        test_range = (args.test_min_len, args.test_max_len)
    spec = ExperimentSpec(
        task=args.task.replace("-", "_"),
        vocab_size=args.vocab_size,
        pairs=args.pairs,
        len_range=(args.min_len, args.max_len_gen),
        test_len_range=test_range,
        corpus_seed=args.corpus_seed,
        d_emb=args.d_emb,
        d_hid=args.d_hid,
        max_vocab=args.max_vocab,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        epochs=args.epochs,
        lm_epochs=args.lm_epochs,
        gradient_clip=args.clip,
        schedule_kind=schedule.kind,
        schedule_params=dict(schedule.params),
        loss_target_mode=args.loss_target,
        beam=args.beam,
        systems=tuple(s.strip() for s in args.systems.split(",") if s.strip()),
        seeds=tuple(int(s) for s in args.seeds.split(",") if s.strip()),
        out_dir=args.out,
        max_sentence_len=args.max_len,
    )
    report = run_experiment(spec)
    print()
    print(report.to_text())
    if spec.out_dir:
        print(f"\nreport written to {spec.out_dir}/report.json")
    return PARTIAL_EXIT if report.any_failures else 0


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="oraclenmt",
                     description="Dynamic-oracle-guided scheduled sampling for NMT")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic parallel corpus")
    p.add_argument("--task", default="reverse",
                   choices=["copy", "reverse", "lexical-translate", "lexical_translate"])
    p.add_argument("--vocab-size", type=int, default=50)
    p.add_argument("--pairs", type=int, default=5000)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len-gen", type=int, default=10, metavar="MAX_LEN",
                   help="maximum generated sentence length")
    p.add_argument("--test-min-len", type=int, default=None)
    p.add_argument("--test-max-len", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain-lm", help="train the target-side language model")
    p.add_argument("--data", required=True, help="directory with train/dev .src/.tgt files")
    _add_common_training_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(fn=cmd_pretrain_lm, epochs=5)

    p = sub.add_parser("pretrain-baseline",
                       help="train the teacher-forcing baseline to a dev-BLEU plateau")
    p.add_argument("--data", required=True)
    _add_common_training_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pretrain_baseline)

    p = sub.add_parser("train", help="train one system variant")
    p.add_argument("--data", required=True)
    _add_common_training_flags(p)
    p.add_argument("--schedule", default="constant",
                   choices=[k.replace("_", "-") for k in SCHEDULE_KINDS] + list(SCHEDULE_KINDS))
    p.add_argument("--schedule-param", action="append", metavar="K=V")
    p.add_argument("--oracle", default="none", choices=["none", "lm", "pretrained"])
    p.add_argument("--lm-checkpoint")
    p.add_argument("--pretrained-checkpoint")
    p.add_argument("--loss-target", default="gold", choices=["gold", "oracle"])
    p.add_argument("--trace", help="write decision trace JSONL here")
    p.add_argument("--run-record", help="write per-epoch record JSONL here")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("translate", help="translate sentences with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", default="-")
    p.add_argument("--output", default="-")
    p.add_argument("--beam", type=int, default=5)
    p.set_defaults(fn=cmd_translate)

    p = sub.add_parser("evaluate", help="corpus BLEU of a hypothesis file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--smooth", action="store_true")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("experiment", help="run the system comparison")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--task", default="reverse",
                   choices=["copy", "reverse", "lexical-translate", "lexical_translate"])
    p.add_argument("--vocab-size", type=int, default=50)
    p.add_argument("--pairs", type=int, default=5000)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len-gen", type=int, default=10)
    p.add_argument("--test-min-len", type=int, default=None)
    p.add_argument("--test-max-len", type=int, default=None)
    p.add_argument("--corpus-seed", type=int, default=0)
    _add_common_training_flags(p)
    p.add_argument("--lm-epochs", type=int, default=5)
    p.add_argument("--schedule", default="linear",
                   choices=[k.replace("_", "-") for k in SCHEDULE_KINDS] + list(SCHEDULE_KINDS))
    p.add_argument("--schedule-param", action="append", metavar="K=V")
    p.add_argument("--loss-target", default="gold", choices=["gold", "oracle"])
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--systems", default=",".join(SYSTEMS))
    p.add_argument("--seeds", default="1")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_experiment)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    defaults = {a.dest: a.default for g in parser._subparsers._group_actions
                for a in g.choices[args.command]._actions}
    try:
        _load_config_overlay(args, defaults)
        return args.fn(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT if isinstance(exc, ConfigError) else RUNTIME_EXIT
    except (TrainingDiverged, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
