"""Deterministic toy acoustic model and attention decoder.

An utterance is rendered by laying its reference tokens out on a frame grid
(``frames_per_token`` frames per token: label frames followed by one blank)
and adding seeded Gaussian noise to a scaled one-hot "evidence" vector per
frame. The same noisy evidence feeds

* the CTC branch (frame logits),
* the encoder embedding (a fixed random projection per frame), and
* the attention branch, which pools the evidence over the segment that the
  current output step is aligned to, adds its own noise, and adds a
  prefix-dependent bias from the previous token.

Noise strength is ``noise_level`` times a per-utterance difficulty factor,
so some utterances are clean and some are hard.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ncmkit.errors import InvalidInputError
from ncmkit.toy_asr.ctc import log_softmax
from ncmkit.toy_asr.types import Vocab


@dataclass(frozen=True)
class Acoustics:
    """Rendered model inputs for one utterance.

    ``att_evidence`` has one row per output position; positions past the end
    of the reference reuse the last (eos-dominant) row.
    """

    frame_logits: np.ndarray  # (T', V)
    enc_embed: np.ndarray  # (T', D)
    att_evidence: np.ndarray  # (n_rows, V)
    utt_seed: int
    difficulty: float
    frames_per_token: int | None = None

    @property
    def n_frames(self) -> int:
        return self.frame_logits.shape[0]


@dataclass(frozen=True)
class ToyAcousticModel:
    vocab: Vocab
    frames_per_token: int = 3
    noise_level: float = 1.0
    embed_dim: int = 16
    seed: int = 0
    logit_scale: float = 8.0
    att_noise: float = 0.6
    prev_bias: float = 0.3

    def __post_init__(self):
        if self.frames_per_token < 1:
            raise InvalidInputError("frames_per_token must be positive")
        if self.noise_level < 0:
            raise InvalidInputError("noise_level must be non-negative")
        if self.embed_dim < 1:
            raise InvalidInputError("embed_dim must be positive")
        rng = np.random.default_rng([self.seed, 7919])
        v, d = len(self.vocab), self.embed_dim
        # fixed per-model projections; frozen dataclass, so stash via object.__setattr__
        object.__setattr__(self, "_enc_proj", rng.standard_normal((d, v)) / np.sqrt(v))
        object.__setattr__(self, "_prev_bias", rng.standard_normal((v, v)))
        object.__setattr__(self, "_dec_proj", rng.standard_normal((d, v)) / np.sqrt(v))
        object.__setattr__(self, "_dec_tok", rng.standard_normal((d, v)))

    # -- rendering ---------------------------------------------------------

    def frame_labels(self, reference: Sequence[int],
                     frames_per_token: int | None = None) -> tuple[np.ndarray, list[tuple[int, int]]]:
        """Underlying per-frame labels and each token's label-frame span."""
        blank = self.vocab.blank_id
        r = self.frames_per_token if frames_per_token is None else int(frames_per_token)
        if r < 1:
            raise InvalidInputError("frames_per_token must be positive")
        labels: list[int] = []
        spans: list[tuple[int, int]] = []
        prev = None
        for tok in reference:
            if r == 1 and tok == prev:
                labels.append(blank)
            n_label = max(1, r - 1)
            start = len(labels)
            labels.extend([int(tok)] * n_label)
            spans.append((start, len(labels)))
            if r > 1:
                labels.append(blank)
            prev = tok
        return np.array(labels, dtype=np.int64), spans

    def render(self, reference: Sequence[int], utt_seed: int, difficulty: float = 1.0,
               extra_rows: int = 8, frames_per_token: int | None = None) -> Acoustics:
        """Renders frame logits, encoder embeddings and attention evidence.

        ``frames_per_token`` overrides the model's speaking rate for this
        utterance.
        """
        reference = [int(t) for t in reference]
        if not reference:
            raise InvalidInputError("reference must be non-empty")
        self.vocab.check_ids(reference)
        v = len(self.vocab)
        s = self.logit_scale
        eos, blank = self.vocab.eos_id, self.vocab.blank_id
        rng = np.random.default_rng([int(utt_seed), self.seed, 104729])
        sigma = self.noise_level * float(difficulty)

        rate = self.frames_per_token if frames_per_token is None else int(frames_per_token)
        labels, spans = self.frame_labels(reference, rate)
        n_frames = len(labels)
        evidence = s * np.eye(v)[labels]
        evidence[:, eos] -= s
        evidence = evidence + sigma * rng.standard_normal((n_frames, v))
        enc_embed = np.tanh(evidence @ self._enc_proj.T / s)

        n_ref = len(reference)
        rows = np.empty((n_ref + extra_rows, v))
        for u, (a, b) in enumerate(spans):
            rows[u] = evidence[a:b].mean(axis=0)
        end_row = s * np.eye(v)[eos]
        rows[n_ref:] = end_row
        rows += self.att_noise * sigma * rng.standard_normal(rows.shape)
        rows[:, blank] = -2.0 * s
        return Acoustics(
            frame_logits=evidence,
            enc_embed=enc_embed,
            att_evidence=rows,
            utt_seed=int(utt_seed),
            difficulty=float(difficulty),
            frames_per_token=rate,
        )

    # -- attention decoder -------------------------------------------------

    def att_step_logits(self, acoustics: Acoustics, step: int | np.ndarray,
                        prev: int | np.ndarray) -> np.ndarray:
        """Attention logits for output position ``step`` after token ``prev``.

        Vectorizes over matching arrays of ``step``/``prev``.
        """
        rows = acoustics.att_evidence
        idx = np.minimum(step, rows.shape[0] - 1)
        return rows[idx] + self.prev_bias * self._prev_bias[prev]

    def dec_embedding(self, att_logits: np.ndarray, prev: int | np.ndarray) -> np.ndarray:
        """Decoder state for a step, from its attention logits and previous token."""
        return np.tanh(att_logits @ self._dec_proj.T / self.logit_scale + self._dec_tok[:, prev].T)


def attention_score(tokens: Sequence[int], acoustics: Acoustics, model: ToyAcousticModel) -> float:
    """Autoregressive attention log-probability of ``tokens`` (which end in eos)."""
    tokens = [int(t) for t in tokens]
    if not tokens:
        raise InvalidInputError("token sequence is empty")
    if tokens[-1] != model.vocab.eos_id:
        raise InvalidInputError("token sequence must end in eos")
    model.vocab.check_ids(tokens)
    total = 0.0
    prev = model.vocab.eos_id
    for u, tok in enumerate(tokens):
        logits = model.att_step_logits(acoustics, u, prev)
        total += float(log_softmax(logits)[tok])
        prev = tok
    return total
