"""Synthetic labeled corpora and decode logs with controllable sentence error rate."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ncmkit.errors import InvalidConfigError, NCMError
from ncmkit.metrics import label_record
from ncmkit.toy_asr import RNNLM, BigramLM, Decoder, ToyAcousticModel, Vocab
from ncmkit.toy_asr.model import Acoustics
from ncmkit.toy_asr.search import DEFAULT_WEIGHTS, check_weights
from ncmkit.toy_asr.types import DecodeRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CorpusConfig:
    n_utts: int = 100
    len_range: tuple[int, int] = (3, 8)
    vocab_size: int = 24  # content tokens; blank and eos are added on top
    source_bigram_seed: int = 0
    noise_level: float = 1.0
    seed: int = 0
    frames_per_token: int = 3
    embed_dim: int = 16
    difficulty_spread: float = 0.5
    source_concentration: float = 0.3
    ood_fraction: float = 0.0
    ood_concentration: float = 5.0
    rate_jitter: int = 0  # per-utterance frames_per_token offset drawn from U{-j..j}

    def __post_init__(self):
        if self.vocab_size < 1:
            raise InvalidConfigError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.n_utts < 0:
            raise InvalidConfigError("n_utts must be non-negative")
        lo, hi = self.len_range
        if lo < 1 or lo > hi:
            raise InvalidConfigError(f"len_range must satisfy 1 <= min <= max, got {self.len_range}")
        if self.noise_level < 0:
            raise InvalidConfigError("noise_level must be non-negative")
        if not 0.0 <= self.ood_fraction <= 1.0:
            raise InvalidConfigError("ood_fraction must lie in [0, 1]")
        if self.rate_jitter < 0:
            raise InvalidConfigError("rate_jitter must be non-negative")
        if self.frames_per_token < 1:
            raise InvalidConfigError("frames_per_token must be positive")
        object.__setattr__(self, "len_range", (int(lo), int(hi)))

    @property
    def vocab(self) -> Vocab:
        return Vocab.with_content(self.vocab_size)

    def acoustic_model(self) -> ToyAcousticModel:
        return ToyAcousticModel(self.vocab, frames_per_token=self.frames_per_token,
                                noise_level=self.noise_level, embed_dim=self.embed_dim,
                                seed=self.seed)


@dataclass(frozen=True)
class SourceBigram:
    """Text source: a random bigram over the content tokens.

    Small ``concentration`` gives peaked, predictable text; large values
    approach uniform.
    """

    start: np.ndarray
    trans: np.ndarray
    content_ids: np.ndarray

    @classmethod
    def from_seed(cls, vocab: Vocab, seed: int, concentration: float = 0.3,
                  salt: int = 31337) -> "SourceBigram":
        rng = np.random.default_rng([seed, salt])
        n = len(vocab.content_ids)
        start = rng.dirichlet(np.full(n, concentration))
        trans = rng.dirichlet(np.full(n, concentration), size=n)
        return cls(start=start, trans=trans, content_ids=vocab.content_ids)

    @classmethod
    def for_corpus(cls, config: "CorpusConfig") -> tuple["SourceBigram", "SourceBigram"]:
        """The in-domain source (which LMs are trained on) and the out-of-domain one."""
        return (cls.from_seed(config.vocab, config.source_bigram_seed, config.source_concentration),
                cls.from_seed(config.vocab, config.source_bigram_seed, config.ood_concentration,
                              salt=65537))

    def sample(self, rng: np.random.Generator, length: int) -> tuple[int, ...]:
        idx = [int(rng.choice(len(self.start), p=self.start))]
        for _ in range(length - 1):
            idx.append(int(rng.choice(len(self.start), p=self.trans[idx[-1]])))
        return tuple(int(self.content_ids[i]) for i in idx)


@dataclass(frozen=True)
class CorpusItem:
    utt_id: str
    reference: tuple[int, ...]
    acoustics: Acoustics
    rate_offset: int = 0


@dataclass
class LabeledRecord:
    record: DecodeRecord
    label: int


def _utt_seeds(seed: int, n: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1)[0]) for c in children]


def generate_corpus(config: CorpusConfig) -> list[CorpusItem]:
    """Draws references from the source bigram and renders their acoustics.

    A fraction ``ood_fraction`` of the references comes from a second,
    flatter bigram that the decoders' language models never see. Every
    utterance gets its own seed split off the corpus seed, so item i does not
    depend on how many other items are generated.
    """
    source, ood = SourceBigram.for_corpus(config)
    model = config.acoustic_model()
    lo, hi = config.len_range
    items = []
    for i, useed in enumerate(_utt_seeds(config.seed, config.n_utts)):
        rng = np.random.default_rng(useed)
        length = int(rng.integers(lo, hi + 1))
        from_ood = rng.uniform() < config.ood_fraction
        ref = (ood if from_ood else source).sample(rng, length)
        difficulty = float(np.exp(config.difficulty_spread * rng.standard_normal()))
        offset = 0
        if config.rate_jitter:
            offset = int(rng.integers(-config.rate_jitter, config.rate_jitter + 1))
        rate = max(1, config.frames_per_token + offset)
        items.append(CorpusItem(
            utt_id=f"utt{i:06d}",
            reference=ref,
            acoustics=model.render(ref, utt_seed=useed, difficulty=difficulty,
                                   frames_per_token=rate),
            rate_offset=offset,
        ))
    return items


@dataclass(frozen=True)
class DecoderConfig:
    """How a toy recognizer is assembled for a corpus.

    Acoustic fields left as ``None`` inherit the corpus settings; when all
    of them are inherited the decoder reuses the corpus acoustics as-is,
    otherwise each utterance is re-rendered through the decoder's own front end.
    """

    config_id: str = "asr_matched"
    frames_per_token: int | None = None
    noise_level: float | None = None
    am_seed: int | None = None
    lm_seed: int = 0
    lm_sentences: int = 2000
    ngram_k: float = 1.0
    rnnlm_noise: float = 0.5
    rnnlm_recurrence: float = 0.3
    rnnlm_sharpness: float = 1.0
    weights: tuple[float, float, float, float] = DEFAULT_WEIGHTS
    beam_size: int = 20
    nbest: int = 10
    topk: int = 20
    capture_all: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "weights", check_weights(self.weights))
        except ValueError as exc:
            raise InvalidConfigError(f"decoder {self.config_id}: {exc}") from exc
        if self.nbest > self.beam_size:
            raise InvalidConfigError(f"decoder {self.config_id}: nbest exceeds beam_size")

    def inherits_acoustics(self) -> bool:
        return self.frames_per_token is None and self.noise_level is None and self.am_seed is None

    def acoustic_model(self, corpus: CorpusConfig) -> ToyAcousticModel:
        return replace(
            corpus.acoustic_model(),
            frames_per_token=self.frames_per_token or corpus.frames_per_token,
            noise_level=corpus.noise_level if self.noise_level is None else self.noise_level,
            seed=corpus.seed if self.am_seed is None else self.am_seed,
        )


def default_decoder_configs(corpus: CorpusConfig) -> dict[str, DecoderConfig]:
    """The matched recognizer and a mismatched one with a different front end."""
    return {
        "asr_matched": DecoderConfig(config_id="asr_matched"),
        "asr_mismatched": DecoderConfig(
            config_id="asr_mismatched",
            frames_per_token=max(1, corpus.frames_per_token - 1),
            am_seed=corpus.seed + 1000,
            lm_seed=1,
        ),
    }


def build_decoder(dconf: DecoderConfig, corpus: CorpusConfig) -> Decoder:
    vocab = corpus.vocab
    source, _ = SourceBigram.for_corpus(corpus)
    rng = np.random.default_rng([dconf.lm_seed, 271828])
    lo, hi = corpus.len_range
    text = [source.sample(rng, int(rng.integers(lo, hi + 1))) for _ in range(dconf.lm_sentences)]
    ngram = BigramLM.fit(text, len(vocab), vocab.eos_id, k=dconf.ngram_k)
    rnnlm = RNNLM.from_bigram(ngram, seed=dconf.lm_seed, recurrence=dconf.rnnlm_recurrence,
                              noise=dconf.rnnlm_noise, sharpness=dconf.rnnlm_sharpness)
    return Decoder(
        model=dconf.acoustic_model(corpus),
        ngram=ngram,
        rnnlm=rnnlm,
        weights=dconf.weights,
        beam_size=dconf.beam_size,
        nbest=dconf.nbest,
        topk=dconf.topk,
        max_len=2 * hi + 5,
        config_id=dconf.config_id,
        capture_all=dconf.capture_all,
    )


def _decode_one(args) -> LabeledRecord:
    decoder, item, rerender = args
    acoustics = item.acoustics
    if rerender:
        rate = max(1, decoder.model.frames_per_token + item.rate_offset)
        acoustics = decoder.model.render(item.reference, utt_seed=acoustics.utt_seed,
                                         difficulty=acoustics.difficulty, frames_per_token=rate)
    try:
        rec = decoder.decode(acoustics, utt_id=item.utt_id, reference=item.reference)
    except NCMError as exc:
        raise type(exc)(f"{item.utt_id}: {exc}") from exc
    return LabeledRecord(record=rec, label=label_record(rec))


def decode_corpus(corpus: Sequence[CorpusItem], dconf: DecoderConfig, corpus_config: CorpusConfig,
                  threads: int = 1) -> list[LabeledRecord]:
    """Decodes every utterance and attaches exact-match labels.

    Output order follows the corpus regardless of ``threads``.
    """
    decoder = build_decoder(dconf, corpus_config)
    rerender = not dconf.inherits_acoustics()
    jobs = [(decoder, item, rerender) for item in corpus]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_decode_one, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    return [_decode_one(j) for j in jobs]


def sentence_error_rate(records: Sequence[LabeledRecord]) -> float:
    if not records:
        return 0.0
    return 1.0 - sum(r.label for r in records) / len(records)


def calibrate_noise(corpus_config: CorpusConfig, target_ser: float, tol: float = 0.05,
                    dconf: DecoderConfig | None = None, n_probe: int = 300,
                    bounds: tuple[float, float] = (0.0, 8.0), max_iter: int = 12) -> tuple[float, float]:
    """Bisects ``noise_level`` until the probe-set SER is within ``tol`` of the target.

    Returns:
        (noise_level, measured SER) of the last probe.
    """
    if not 0.0 <= target_ser <= 1.0:
        raise InvalidConfigError(f"target SER must lie in [0, 1], got {target_ser}")
    dconf = dconf or DecoderConfig()
    lo, hi = bounds
    noise, ser = hi, 1.0
    for it in range(max_iter):
        noise = 0.5 * (lo + hi)
        probe = replace(corpus_config, n_utts=n_probe, noise_level=noise)
        ser = sentence_error_rate(decode_corpus(generate_corpus(probe), dconf, probe))
        log.info("calibration step %d: noise=%.4f ser=%.4f", it, noise, ser)
        if abs(ser - target_ser) <= tol:
            break
        if ser < target_ser:
            lo = noise
        else:
            hi = noise
    return noise, ser
