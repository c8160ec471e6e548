"""Data containers produced by the toy decoder."""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ncmkit.errors import InvalidInputError

# Log-domain stand-in for -inf; stays finite under addition and scaling.
NEG_INF = -1e30
# Anything below this is treated as infeasible.
NEG_INF_THRESHOLD = -1e29


@dataclass(frozen=True)
class Vocab:
    """Token inventory with dedicated CTC blank and end-of-sequence ids."""

    tokens: tuple[str, ...]
    blank_id: int = 0
    eos_id: int = 1

    def __post_init__(self):
        n = len(self.tokens)
        if n < 3:
            raise InvalidInputError(f"vocab needs at least 3 tokens, got {n}")
        if len(set(self.tokens)) != n:
            raise InvalidInputError("vocab token symbols must be unique")
        for name in ("blank_id", "eos_id"):
            idx = getattr(self, name)
            if not 0 <= idx < n:
                raise InvalidInputError(f"{name}={idx} out of range for vocab of size {n}")
        if self.blank_id == self.eos_id:
            raise InvalidInputError("blank_id and eos_id must differ")

    @classmethod
    def with_content(cls, n_content: int) -> "Vocab":
        """Builds ``<blank>``, ``<eos>`` followed by ``n_content`` content symbols."""
        if n_content < 1:
            raise InvalidInputError("need at least one content token")
        letters = string.ascii_lowercase
        symbols = [letters[i] if i < len(letters) else f"t{i}" for i in range(n_content)]
        return cls(tokens=("<blank>", "<eos>", *symbols))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def content_ids(self) -> np.ndarray:
        special = {self.blank_id, self.eos_id}
        return np.array([i for i in range(len(self.tokens)) if i not in special], dtype=np.int64)

    def check_ids(self, ids: Sequence[int]) -> None:
        n = len(self.tokens)
        for t in ids:
            if not 0 <= int(t) < n:
                raise InvalidInputError(f"token id {t} out of range for vocab of size {n}")

    def render(self, ids: Sequence[int]) -> str:
        return " ".join(self.tokens[int(i)] for i in ids)


@dataclass
class Hypothesis:
    """A complete hypothesis with its four component scores.

    ``tokens`` ends in eos, so ``len(tokens)`` is the step count U. The
    per-step captures (``step_topk_ids``/``step_topk_logits``, shape (U, K),
    and ``step_dec_embed``, shape (U, D)) are ``None`` when not captured.
    """

    tokens: tuple[int, ...]
    score_ctc: float
    score_att: float
    score_ngram: float
    score_rnnlm: float
    combined: float
    step_topk_ids: np.ndarray | None = None
    step_topk_logits: np.ndarray | None = None
    step_dec_embed: np.ndarray | None = None

    @property
    def n_steps(self) -> int:
        return len(self.tokens)

    @property
    def components(self) -> np.ndarray:
        return np.array([self.score_ctc, self.score_att, self.score_ngram, self.score_rnnlm])

    @property
    def has_steps(self) -> bool:
        return self.step_topk_logits is not None and self.step_dec_embed is not None

    def content(self, eos_id: int) -> tuple[int, ...]:
        """Tokens with trailing eos stripped."""
        toks = self.tokens
        while toks and toks[-1] == eos_id:
            toks = toks[:-1]
        return toks


@dataclass
class DecodeRecord:
    """Everything the decoder produced for one utterance."""

    utt_id: str
    reference: tuple[int, ...]
    nbest: list[Hypothesis]
    enc_frames: int
    enc_embed: np.ndarray
    decoder_config_id: str
    eos_id: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.nbest:
            raise InvalidInputError(f"{self.utt_id}: nbest list is empty")
        if self.enc_embed.shape[0] != self.enc_frames:
            raise InvalidInputError(
                f"{self.utt_id}: enc_embed has {self.enc_embed.shape[0]} frames, "
                f"expected {self.enc_frames}"
            )

    @property
    def best(self) -> Hypothesis:
        return self.nbest[0]
