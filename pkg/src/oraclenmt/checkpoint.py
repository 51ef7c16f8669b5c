"""Versioned binary checkpoint container.

Layout: magic (8 bytes) | version (u32 LE) | sha256 of the payload (32 bytes)
| payload.  The payload is a canonical-JSON metadata block followed by named
tensors as (name length u16, name utf-8, rank u8, dims u32 LE each, values
f64 LE).  Tensors are written sorted by name, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .data import Vocabulary
from .errors import CheckpointError
from .model import (
    LanguageModelParameters,
    LmConfig,
    ModelConfig,
    ModelParameters,
)

MAGIC = b"ONMTCKPT"
VERSION = 1


def config_fingerprint(config: dict) -> str:
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    hyperparams: dict
    tensors: Dict[str, np.ndarray]
    vocab_src: Optional[dict] = None
    vocab_tgt: Optional[dict] = None
    config_fingerprint: str = ""
    seed: int = 0
    version: int = field(default=VERSION)


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    meta = {
        "hyperparams": ckpt.hyperparams,
        "vocab_src": ckpt.vocab_src,
        "vocab_tgt": ckpt.vocab_tgt,
        "config_fingerprint": ckpt.config_fingerprint,
        "seed": ckpt.seed,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(struct.pack("<Q", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(ckpt.tensors)))
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f8")
        name_bytes = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_bytes)))
        buf.write(name_bytes)
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(arr.tobytes())
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(digest)
        fh.write(payload)


def load_checkpoint(path: str, expected_hyperparams: Optional[dict] = None) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 + 32 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version} (supported: {VERSION})"
        )
    header_end = len(MAGIC) + 4 + 32
    digest = blob[len(MAGIC) + 4: header_end]
    payload = blob[header_end:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: integrity check failed (corrupt or truncated)")

    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, payload, off)
        off += size
        return vals

    (meta_len,) = take("<Q")
    meta = json.loads(payload[off: off + meta_len].decode("utf-8"))
    off += meta_len
    (n_tensors,) = take("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = take("<H")
        name = payload[off: off + name_len].decode("utf-8")
        off += name_len
        (rank,) = take("<B")
        dims = tuple(take(f"<{rank}I")) if rank else ()
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=off)
        off += count * 8
        tensors[name] = arr.reshape(dims).astype(np.float64)

    hyper = meta["hyperparams"]
    if expected_hyperparams:
        for key, want in expected_hyperparams.items():
            got = hyper.get(key)
            if got != want:
                raise CheckpointError(
                    f"{path}: checkpoint has {key}={got}, expected {key}={want}"
                )
    return Checkpoint(
        hyperparams=hyper,
        tensors=tensors,
        vocab_src=meta.get("vocab_src"),
        vocab_tgt=meta.get("vocab_tgt"),
        config_fingerprint=meta.get("config_fingerprint", ""),
        seed=meta.get("seed", 0),
        version=version,
    )


# ---------------------------------------------------------------------------
# Model adapters
# ---------------------------------------------------------------------------

def model_to_checkpoint(params: ModelParameters, vocab_src: Vocabulary,
                        vocab_tgt: Vocabulary, fingerprint: str = "",
                        seed: int = 0) -> Checkpoint:
    return Checkpoint(
        hyperparams=params.config.hyperparams(),
        tensors=params.arrays(),
        vocab_src=vocab_src.to_snapshot(),
        vocab_tgt=vocab_tgt.to_snapshot(),
        config_fingerprint=fingerprint,
        seed=seed,
    )


def model_from_checkpoint(ckpt: Checkpoint):
    h = ckpt.hyperparams
    if h.get("kind") != "seq2seq":
        raise CheckpointError(f"checkpoint holds a {h.get('kind')!r} model, expected seq2seq")
    config = ModelConfig(
        vocab_src=h["vocab_src"], vocab_tgt=h["vocab_tgt"],
        d_emb=h["d_emb"], d_hid=h["d_hid"], d_att=h["d_att"],
    )
    params = ModelParameters.from_arrays(config, ckpt.tensors)
    vocab_src = Vocabulary.from_snapshot(ckpt.vocab_src) if ckpt.vocab_src else None
    vocab_tgt = Vocabulary.from_snapshot(ckpt.vocab_tgt) if ckpt.vocab_tgt else None
    return params, vocab_src, vocab_tgt


def lm_to_checkpoint(params: LanguageModelParameters, vocab_tgt: Vocabulary,
                     fingerprint: str = "", seed: int = 0) -> Checkpoint:
    return Checkpoint(
        hyperparams=params.config.hyperparams(),
        tensors=params.arrays(),
        vocab_tgt=vocab_tgt.to_snapshot(),
        config_fingerprint=fingerprint,
        seed=seed,
    )


def lm_from_checkpoint(ckpt: Checkpoint):
    h = ckpt.hyperparams
    if h.get("kind") != "lm":
        raise CheckpointError(f"checkpoint holds a {h.get('kind')!r} model, expected lm")
    config = LmConfig(vocab=h["vocab"], d_emb=h["d_emb"], d_hid=h["d_hid"])
    params = LanguageModelParameters.from_arrays(config, ckpt.tensors)
    vocab_tgt = Vocabulary.from_snapshot(ckpt.vocab_tgt) if ckpt.vocab_tgt else None
    return params, vocab_tgt
