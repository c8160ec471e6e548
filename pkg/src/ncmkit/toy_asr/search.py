"""Joint CTC/attention beam search with bigram and RNN LM shallow fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ncmkit.errors import EmptyResultError, InvalidInputError, InvalidWeightsError
from ncmkit.toy_asr.ctc import CTCPrefixState, ctc_frame_logprobs, extend_prefixes, log_softmax
from ncmkit.toy_asr.lm import RNNLM, BigramLM
from ncmkit.toy_asr.model import Acoustics, ToyAcousticModel
from ncmkit.toy_asr.types import NEG_INF, NEG_INF_THRESHOLD, DecodeRecord, Hypothesis

# (ctc, att, ngram, rnnlm) weights of the reference system.
DEFAULT_WEIGHTS = (0.5, 0.5, 0.8, 0.2)


def check_weights(weights: Sequence[float], tol: float = 1e-9) -> tuple[float, float, float, float]:
    if len(weights) != 4:
        raise InvalidWeightsError(f"expected 4 weights, got {len(weights)}")
    w = tuple(float(x) for x in weights)
    if any(not (0.0 <= x <= 1.0) for x in w):
        raise InvalidWeightsError(f"weights must lie in [0, 1], got {w}")
    if abs(w[0] + w[1] - 1.0) > tol or abs(w[2] + w[3] - 1.0) > tol:
        raise InvalidWeightsError(f"need w1 + w2 = 1 and w3 + w4 = 1, got {w}")
    return w


def combine_hypothesis_score(score_ctc: float, score_att: float, score_ngram: float,
                             score_rnnlm: float, weights: Sequence[float] = DEFAULT_WEIGHTS) -> float:
    """Weighted sum of the four component log-probabilities."""
    w1, w2, w3, w4 = check_weights(weights)
    return w1 * score_ctc + w2 * score_att + w3 * score_ngram + w4 * score_rnnlm


def mtl_loss(l_ctc: float, l_att: float, lam: float) -> float:
    """Interpolated CTC/attention training objective."""
    if not 0.0 <= lam <= 1.0:
        raise InvalidInputError(f"lambda must lie in [0, 1], got {lam}")
    return lam * l_ctc + (1.0 - lam) * l_att


@dataclass
class Decoder:
    """A fully specified toy recognizer: acoustic model, LMs and search settings.

    ``max_len`` caps the number of content tokens; when ``None`` it is
    derived from the utterance length as twice the longest reference the
    frames could hold, plus 5.
    """

    model: ToyAcousticModel
    ngram: BigramLM
    rnnlm: RNNLM
    weights: tuple[float, float, float, float] = DEFAULT_WEIGHTS
    beam_size: int = 20
    nbest: int = 10
    topk: int = 20
    max_len: int | None = None
    config_id: str = "toy"
    capture_all: bool = False
    _ngram_table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.weights = check_weights(self.weights)
        if self.beam_size < 1 or self.nbest < 1 or self.topk < 1:
            raise InvalidInputError("beam_size, nbest and topk must be positive")
        if self.nbest > self.beam_size:
            raise InvalidInputError(f"nbest ({self.nbest}) exceeds beam_size ({self.beam_size})")
        v = len(self.model.vocab)
        if self.ngram.vocab_size != v or self.rnnlm.vocab_size != v:
            raise InvalidInputError("language model vocabulary does not match the acoustic model")
        self._ngram_table = self.ngram.log_prob_table()

    def length_cap(self, acoustics: Acoustics) -> int:
        if self.max_len is not None:
            return self.max_len
        rate = acoustics.frames_per_token or self.model.frames_per_token
        bound = math.ceil(acoustics.n_frames / rate)
        return 2 * bound + 5

    def decode(self, acoustics: Acoustics, utt_id: str = "utt",
               reference: Sequence[int] = ()) -> DecodeRecord:
        return beam_search_decode(acoustics, self, utt_id=utt_id, reference=reference)


@dataclass
class _Partial:
    tokens: tuple[int, ...]
    ctc: CTCPrefixState
    att: float
    ngram: float
    rnnlm: float
    h: np.ndarray
    total: float
    topk_ids: tuple = ()
    topk_logits: tuple = ()
    dec: tuple = ()


def beam_search_decode(acoustics: Acoustics, decoder: Decoder, *, utt_id: str = "utt",
                       reference: Sequence[int] = ()) -> DecodeRecord:
    """Decodes one utterance and returns its N-best list with per-step captures.

    Partial hypotheses are ranked by the running weighted sum of the CTC
    prefix score and the accumulated attention/LM log-probabilities. All
    increments are log-probabilities, so running scores never increase;
    search stops once no running hypothesis can beat the current N-th best
    finished one. Ties are broken lexicographically on token ids.
    """
    model = decoder.model
    vocab = model.vocab
    blank, eos = vocab.blank_id, vocab.eos_id
    w1, w2, w3, w4 = decoder.weights
    logp = ctc_frame_logprobs(acoustics.frame_logits)
    content = vocab.content_ids
    cand = np.concatenate([content, [eos]])
    n_content = len(content)
    k = min(decoder.topk, len(cand))
    max_len = decoder.length_cap(acoustics)
    lm = decoder.rnnlm

    running = [_Partial(
        tokens=(), ctc=CTCPrefixState.initial(logp, blank), att=0.0, ngram=0.0, rnnlm=0.0,
        h=lm.initial_hidden(), total=0.0,
    )]
    ended: list[tuple[float, tuple[int, ...], _Partial, float]] = []

    for step in range(max_len + 1):
        prev = np.array([p.tokens[-1] if p.tokens else eos for p in running])
        att_logits = model.att_step_logits(acoustics, step, prev)
        att_lp = log_softmax(att_logits)[:, cand]
        dec = model.dec_embedding(att_logits, prev)
        h_next = lm.step(np.stack([p.h for p in running]), prev)
        rnn_lp = lm.log_probs(h_next)[:, cand]
        ng_lp = decoder._ngram_table[prev][:, cand]

        prefix = np.array([p.ctc.score for p in running])
        ctc_new = np.empty((len(running), len(cand)))
        ctc_new[:, n_content] = [p.ctc.full_score() for p in running]
        if step < max_len:
            ext_scores, ext_n, ext_b = extend_prefixes([p.ctc for p in running], logp, content, blank)
            ctc_new[:, :n_content] = ext_scores
        else:
            ext_n = ext_b = None
            ctc_new[:, :n_content] = NEG_INF
        feasible = ctc_new > NEG_INF_THRESHOLD

        inc = w1 * (ctc_new - prefix[:, None]) + w2 * att_lp + w3 * ng_lp + w4 * rnn_lp
        order = np.lexsort((np.broadcast_to(cand, inc.shape), -inc), axis=-1)[:, :k]
        step_ids = np.take_along_axis(np.broadcast_to(cand, inc.shape), order, axis=1)
        step_logits = np.take_along_axis(inc, order, axis=1)

        att_cum = np.array([p.att for p in running])[:, None] + att_lp
        ng_cum = np.array([p.ngram for p in running])[:, None] + ng_lp
        rnn_cum = np.array([p.rnnlm for p in running])[:, None] + rnn_lp
        totals = w1 * ctc_new + w2 * att_cum + w3 * ng_cum + w4 * rnn_cum
        totals = np.where(feasible, totals, -np.inf)

        flat = totals.ravel()
        n_ok = int(np.count_nonzero(np.isfinite(flat)))
        if n_ok == 0:
            break
        keep = min(decoder.beam_size, n_ok)
        cut = np.partition(flat, flat.size - keep)[flat.size - keep]
        pool = np.flatnonzero(flat >= cut)
        n_c = len(cand)
        pool = sorted(
            pool.tolist(),
            key=lambda i: (-flat[i], running[i // n_c].tokens + (int(cand[i % n_c]),)),
        )[:keep]

        nxt: list[_Partial] = []
        for i in pool:
            b, j = divmod(i, n_c)
            par = running[b]
            tok = int(cand[j])
            child = _Partial(
                tokens=par.tokens + (tok,),
                ctc=par.ctc,
                att=float(att_cum[b, j]),
                ngram=float(ng_cum[b, j]),
                rnnlm=float(rnn_cum[b, j]),
                h=h_next[b],
                total=float(flat[i]),
                topk_ids=par.topk_ids + (step_ids[b],),
                topk_logits=par.topk_logits + (step_logits[b],),
                dec=par.dec + (dec[b],),
            )
            if tok == eos:
                ctc_full = float(ctc_new[b, j])
                combined = combine_hypothesis_score(ctc_full, child.att, child.ngram, child.rnnlm,
                                                    decoder.weights)
                ended.append((combined, child.tokens, child, ctc_full))
            else:
                child.ctc = CTCPrefixState(r_n=ext_n[b, j], r_b=ext_b[b, j],
                                           score=float(ext_scores[b, j]), last=tok)
                nxt.append(child)
        running = nxt
        if not running:
            break
        if len(ended) >= decoder.nbest:
            ended.sort(key=lambda e: (-e[0], e[1]))
            if max(p.total for p in running) < ended[decoder.nbest - 1][0]:
                break

    if not ended:
        raise EmptyResultError(f"{utt_id}: no complete hypothesis within {max_len} tokens")
    ended.sort(key=lambda e: (-e[0], e[1]))
    nbest = []
    for rank, (combined, tokens, p, ctc_full) in enumerate(ended[: decoder.nbest]):
        capture = rank == 0 or decoder.capture_all
        nbest.append(Hypothesis(
            tokens=tokens,
            score_ctc=ctc_full,
            score_att=p.att,
            score_ngram=p.ngram,
            score_rnnlm=p.rnnlm,
            combined=combined,
            step_topk_ids=np.stack(p.topk_ids) if capture else None,
            step_topk_logits=np.stack(p.topk_logits) if capture else None,
            step_dec_embed=np.stack(p.dec) if capture else None,
        ))
    return DecodeRecord(
        utt_id=utt_id,
        reference=tuple(int(t) for t in reference),
        nbest=nbest,
        enc_frames=acoustics.n_frames,
        enc_embed=acoustics.enc_embed,
        decoder_config_id=decoder.config_id,
        eos_id=eos,
    )
