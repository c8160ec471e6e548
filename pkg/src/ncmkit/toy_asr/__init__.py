"""Toy joint CTC-attention recognizer that emits full decoding artifacts."""

from ncmkit.toy_asr.ctc import ctc_prefix_score, log_softmax
from ncmkit.toy_asr.lm import RNNLM, BigramLM, ngram_score, rnnlm_score
from ncmkit.toy_asr.model import Acoustics, ToyAcousticModel, attention_score
from ncmkit.toy_asr.search import (
    DEFAULT_WEIGHTS,
    Decoder,
    beam_search_decode,
    check_weights,
    combine_hypothesis_score,
    mtl_loss,
)
from ncmkit.toy_asr.types import NEG_INF, DecodeRecord, Hypothesis, Vocab

__all__ = [
    "Acoustics",
    "BigramLM",
    "DEFAULT_WEIGHTS",
    "DecodeRecord",
    "Decoder",
    "Hypothesis",
    "NEG_INF",
    "RNNLM",
    "ToyAcousticModel",
    "Vocab",
    "attention_score",
    "beam_search_decode",
    "check_weights",
    "combine_hypothesis_score",
    "ctc_prefix_score",
    "log_softmax",
    "mtl_loss",
    "ngram_score",
    "rnnlm_score",
]
