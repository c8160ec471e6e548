"""CTC label-sequence scoring in the log domain.

Two entry points share the same forward recursion:

* :func:`ctc_prefix_score` scores a finished label sequence, i.e. the total
  probability of every frame alignment that collapses to exactly ``prefix``.
* :class:`CTCPrefixState` carries the per-frame forward variables of a
  partial hypothesis so that beam search can extend it by one token for
  every candidate at once (the prefix probability used by hybrid
  CTC/attention decoders).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ncmkit.errors import InvalidInputError
from ncmkit.toy_asr.types import NEG_INF, NEG_INF_THRESHOLD


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def _floor(x):
    """Snaps anything below the threshold back onto the sentinel."""
    return np.where(x < NEG_INF_THRESHOLD, NEG_INF, x)


def ctc_frame_logprobs(frame_logits: np.ndarray) -> np.ndarray:
    frame_logits = np.asarray(frame_logits, dtype=np.float64)
    if frame_logits.ndim != 2 or frame_logits.shape[0] < 1:
        raise InvalidInputError(f"frame_logits must be (T', V) with T' >= 1, got {frame_logits.shape}")
    if not np.all(np.isfinite(frame_logits)):
        raise InvalidInputError("frame_logits contain non-finite values")
    return log_softmax(frame_logits, axis=1)


def min_frames(labels: Sequence[int]) -> int:
    """Fewest frames able to emit ``labels`` (repeats need a blank in between)."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_prefix_score(prefix: Sequence[int], frame_logits: np.ndarray, blank_id: int) -> float:
    """Log-probability that the CTC output collapses to exactly ``prefix``.

    Args:
        prefix: Label ids, no blanks. May be empty.
        frame_logits: (T', V) unnormalized emission scores.
        blank_id: Index of the CTC blank.

    Returns:
        The log of the alignment sum, or ``NEG_INF`` when ``prefix`` cannot be
        emitted in T' frames.
    """
    logp = ctc_frame_logprobs(frame_logits)
    labels = [int(t) for t in prefix]
    if blank_id in labels:
        raise InvalidInputError("prefix must not contain the blank symbol")
    n_frames, vocab_size = logp.shape
    if any(not 0 <= t < vocab_size for t in labels):
        raise InvalidInputError("prefix contains out-of-range token ids")
    if min_frames(labels) > n_frames:
        return NEG_INF

    ext = [blank_id]
    for t in labels:
        ext += [t, blank_id]
    ext = np.array(ext)
    n_states = len(ext)
    # skip transition s-2 -> s allowed onto a label differing from the previous label
    can_skip = np.zeros(n_states, dtype=bool)
    for s in range(2, n_states):
        can_skip[s] = ext[s] != blank_id and ext[s] != ext[s - 2]

    alpha = np.full(n_states, NEG_INF)
    alpha[0] = logp[0, blank_id]
    if n_states > 1:
        alpha[1] = logp[0, ext[1]]
    for t in range(1, n_frames):
        shift1 = np.concatenate(([NEG_INF], alpha[:-1]))
        shift2 = np.concatenate(([NEG_INF, NEG_INF], alpha[:-2]))[:n_states]
        shift2 = np.where(can_skip, shift2, NEG_INF)
        acc = np.logaddexp(np.logaddexp(alpha, shift1), shift2)
        alpha = _floor(acc + logp[t, ext])
    tail = alpha[-1] if n_states == 1 else np.logaddexp(alpha[-1], alpha[-2])
    tail = float(tail)
    return NEG_INF if tail < NEG_INF_THRESHOLD else tail


@dataclass
class CTCPrefixState:
    """Forward variables of one partial hypothesis.

    ``r_n[t]``/``r_b[t]`` are log-probabilities that the first t+1 frames emit
    the prefix and end in a label / in a blank. ``score`` is the prefix
    probability (output *starts with* the prefix).
    """

    r_n: np.ndarray
    r_b: np.ndarray
    score: float
    last: int

    @classmethod
    def initial(cls, logp: np.ndarray, blank_id: int) -> "CTCPrefixState":
        n_frames = logp.shape[0]
        return cls(
            r_n=np.full(n_frames, NEG_INF),
            r_b=np.cumsum(logp[:, blank_id]),
            score=0.0,
            last=-1,
        )

    def full_score(self) -> float:
        """Probability that the output is exactly this prefix."""
        val = float(np.logaddexp(self.r_n[-1], self.r_b[-1]))
        return NEG_INF if val < NEG_INF_THRESHOLD else val


def extend_prefixes(
    states: Sequence[CTCPrefixState],
    logp: np.ndarray,
    candidates: np.ndarray,
    blank_id: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Extends every state by every candidate label in one vectorized pass.

    Returns:
        (scores, r_n, r_b) with shapes (B, C), (B, C, T'), (B, C, T').
    """
    n_frames = logp.shape[0]
    r_n = np.stack([s.r_n for s in states])  # (B, T)
    r_b = np.stack([s.r_b for s in states])
    last = np.array([s.last for s in states])
    empty = last < 0
    x = logp[:, candidates].T  # (C, T)
    blank = logp[:, blank_id]

    same = candidates[None, :] == last[:, None]  # (B, C)
    phi = np.logaddexp(
        r_b[:, None, :],
        np.where(same[:, :, None], NEG_INF, r_n[:, None, :]),
    )  # (B, C, T)
    n_b, n_c = phi.shape[:2]
    new_n = np.empty((n_b, n_c, n_frames))
    new_b = np.empty((n_b, n_c, n_frames))
    new_n[:, :, 0] = np.where(empty[:, None], x[None, :, 0], NEG_INF)
    new_b[:, :, 0] = NEG_INF
    for t in range(1, n_frames):
        new_n[:, :, t] = np.logaddexp(new_n[:, :, t - 1], phi[:, :, t - 1]) + x[None, :, t]
        new_b[:, :, t] = np.logaddexp(new_b[:, :, t - 1], new_n[:, :, t - 1]) + blank[t]
    if n_frames > 1:
        from_phi = phi[:, :, :-1] + x[None, :, 1:]
        m = np.max(from_phi, axis=2)
        lse = m + np.log(np.sum(np.exp(from_phi - m[:, :, None]), axis=2))
        scores = np.logaddexp(new_n[:, :, 0], lse)
    else:
        scores = new_n[:, :, 0].copy()
    return _floor(scores), _floor(new_n), _floor(new_b)
