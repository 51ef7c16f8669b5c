"""Desk-scale NMT training with dynamic-oracle-guided scheduled sampling."""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, backward
from .model import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    LmConfig,
    ModelConfig,
    ModelParameters,
    LanguageModelParameters,
    RnnLanguageModel,
    Seq2SeqModel,
)
