"""External language models used in shallow fusion: add-k bigram and a tiny RNN LM.

Both use eos as the start-of-sequence context.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ncmkit.errors import InvalidInputError
from ncmkit.toy_asr.ctc import log_softmax


@dataclass(frozen=True)
class BigramLM:
    """Add-k smoothed bigram over the full vocabulary.

    ``counts[prev, tok]`` holds training bigram counts; row ``eos_id`` doubles
    as the sentence-start context.
    """

    counts: np.ndarray
    k: float = 1.0
    eos_id: int = 1

    def __post_init__(self):
        if self.k <= 0:
            raise InvalidInputError(f"smoothing k must be > 0, got {self.k}")
        c = np.asarray(self.counts, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise InvalidInputError(f"counts must be square, got shape {c.shape}")
        object.__setattr__(self, "counts", c)

    @property
    def vocab_size(self) -> int:
        return self.counts.shape[0]

    @classmethod
    def fit(cls, sentences: Iterable[Sequence[int]], vocab_size: int, eos_id: int, k: float = 1.0):
        counts = np.zeros((vocab_size, vocab_size))
        for sent in sentences:
            prev = eos_id
            for tok in list(sent) + [eos_id]:
                counts[prev, tok] += 1
                prev = tok
        return cls(counts=counts, k=k, eos_id=eos_id)

    def log_prob_table(self) -> np.ndarray:
        """(V, V) matrix of log P(tok | prev)."""
        v = self.vocab_size
        num = self.counts + self.k
        den = self.counts.sum(axis=1, keepdims=True) + self.k * v
        return np.log(num / den)


def ngram_score(tokens: Sequence[int], lm: BigramLM) -> float:
    """Sum of smoothed bigram log-probabilities, starting from the eos context."""
    v = lm.vocab_size
    total = 0.0
    prev = lm.eos_id
    row_totals = lm.counts.sum(axis=1)
    for tok in tokens:
        tok = int(tok)
        if not 0 <= tok < v:
            raise InvalidInputError(f"token id {tok} out of range for vocab of size {v}")
        total += float(np.log((lm.counts[prev, tok] + lm.k) / (row_totals[prev] + lm.k * v)))
        prev = tok
    return total


@dataclass(frozen=True)
class RNNLM:
    """Elman recurrence ``h_t = tanh(W_h h_{t-1} + W_e onehot(y_{t-1}))``.

    Shapes: ``W_h`` (H, H), ``W_e`` (H, V), ``W_o`` (V, H).
    """

    W_h: np.ndarray
    W_e: np.ndarray
    W_o: np.ndarray
    eos_id: int = 1

    def __post_init__(self):
        for name in ("W_h", "W_e", "W_o"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        h = self.W_h.shape[0]
        if self.W_h.shape != (h, h) or self.W_e.shape[0] != h or self.W_o.shape != (self.W_e.shape[1], h):
            raise InvalidInputError("inconsistent RNN LM weight shapes")

    @property
    def vocab_size(self) -> int:
        return self.W_e.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.W_h.shape[0]

    @classmethod
    def zeros(cls, vocab_size: int, hidden: int, eos_id: int = 1) -> "RNNLM":
        return cls(
            W_h=np.zeros((hidden, hidden)),
            W_e=np.zeros((hidden, vocab_size)),
            W_o=np.zeros((vocab_size, hidden)),
            eos_id=eos_id,
        )

    @classmethod
    def from_bigram(cls, bigram: BigramLM, seed: int, recurrence: float = 0.3,
                    noise: float = 0.5, gain: float = 3.0, sharpness: float = 1.0) -> "RNNLM":
        """Distils a bigram table into the recurrence, then perturbs it.

        With ``h = tanh(gain) * onehot(prev)`` the readout reproduces the bigram
        log-probabilities; the random recurrent and readout perturbations keep
        the two language models from being redundant. The readout is scaled
        by ``sharpness``; values below 1 give a flatter, weaker model.
        """
        rng = np.random.default_rng(seed)
        v = bigram.vocab_size
        table = bigram.log_prob_table()  # (prev, tok)
        W_e = gain * np.eye(v)
        W_h = recurrence * rng.standard_normal((v, v)) / np.sqrt(v)
        W_o = sharpness * (table.T / np.tanh(gain) + noise * rng.standard_normal((v, v)))
        return cls(W_h=W_h, W_e=W_e, W_o=W_o, eos_id=bigram.eos_id)

    def initial_hidden(self, batch: int | None = None) -> np.ndarray:
        if batch is None:
            return np.zeros(self.hidden_size)
        return np.zeros((batch, self.hidden_size))

    def step(self, h: np.ndarray, prev: np.ndarray | int) -> np.ndarray:
        """Advances hidden state(s) ``h`` after emitting ``prev``."""
        return np.tanh(h @ self.W_h.T + self.W_e[:, prev].T)

    def log_probs(self, h: np.ndarray) -> np.ndarray:
        return log_softmax(h @ self.W_o.T, axis=-1)


def rnnlm_score(tokens: Sequence[int], lm: RNNLM) -> float:
    """Teacher-forced log-probability of ``tokens`` with ``h_0 = 0``.

    The context fed before the first token is eos; step t uses the hidden
    state obtained after consuming y_{t-1}.
    """
    v = lm.vocab_size
    total = 0.0
    h = lm.initial_hidden()
    prev = lm.eos_id
    for tok in tokens:
        tok = int(tok)
        if not 0 <= tok < v:
            raise InvalidInputError(f"token id {tok} out of range for vocab of size {v}")
        h = lm.step(h, prev)
        total += float(lm.log_probs(h)[tok])
        prev = tok
    return total
