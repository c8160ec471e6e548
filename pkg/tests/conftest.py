import itertools
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from ncmkit.toy_asr import (  # noqa: E402
    RNNLM,
    BigramLM,
    Decoder,
    ToyAcousticModel,
    Vocab,
    attention_score,
    combine_hypothesis_score,
    ctc_prefix_score,
    ngram_score,
    rnnlm_score,
)
from ncmkit.toy_asr.types import NEG_INF_THRESHOLD  # noqa: E402


def random_toy_decoder(seed, n_content=3, max_len=4, noise=1.5, frames_per_token=2):
    """A small seeded recognizer whose search space can be enumerated."""
    rng = np.random.default_rng(seed)
    vocab = Vocab.with_content(n_content)
    v = len(vocab)
    model = ToyAcousticModel(vocab, frames_per_token=frames_per_token, noise_level=noise,
                             embed_dim=4, seed=seed)
    counts = rng.integers(0, 4, size=(v, v)).astype(float)
    ngram = BigramLM(counts, k=1.0, eos_id=vocab.eos_id)
    rnnlm = RNNLM(W_h=rng.normal(size=(3, 3)), W_e=rng.normal(size=(3, v)),
                  W_o=rng.normal(size=(v, 3)), eos_id=vocab.eos_id)
    w1 = float(rng.uniform())
    w3 = float(rng.uniform())
    n_hyps = sum((n_content) ** n for n in range(max_len + 1))
    decoder = Decoder(model, ngram, rnnlm, weights=(w1, 1 - w1, w3, 1 - w3),
                      beam_size=max(n_hyps * (n_content + 1), v ** max_len), nbest=5,
                      topk=3, max_len=max_len)
    ref = [int(t) for t in rng.integers(2, v, size=rng.integers(1, 4))]
    acoustics = model.render(ref, utt_seed=seed, difficulty=1.0)
    return decoder, ref, acoustics


def exhaustive_best(decoder, acoustics):
    """Argmax of the weighted score over every sequence of <= max_len content tokens."""
    vocab = decoder.model.vocab
    content = [int(c) for c in vocab.content_ids]
    eos = vocab.eos_id
    best = None
    for n in range(decoder.max_len + 1):
        for seq in itertools.product(content, repeat=n):
            toks = tuple(seq) + (eos,)
            c = ctc_prefix_score(seq, acoustics.frame_logits, vocab.blank_id)
            if c < NEG_INF_THRESHOLD:
                continue
            a = attention_score(toks, acoustics, decoder.model)
            g = ngram_score(toks, decoder.ngram)
            r = rnnlm_score(toks, decoder.rnnlm)
            s = combine_hypothesis_score(c, a, g, r, decoder.weights)
            key = (-s, toks)
            if best is None or key < best[0]:
                best = (key, toks, s)
    return best[1], best[2]


@pytest.fixture
def small_vocab():
    return Vocab(tokens=("a", "<blank>", "<eos>"), blank_id=1, eos_id=2)


# criterion number -> (name, passed, detail), filled in by test_acceptance
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {name} ({detail})")
