from dataclasses import replace

import numpy as np
import pytest

from ncmkit.errors import InvalidConfigError
from ncmkit.metrics import label_record
from ncmkit.synthgen import (
    CorpusConfig,
    DecoderConfig,
    SourceBigram,
    build_decoder,
    calibrate_noise,
    decode_corpus,
    default_decoder_configs,
    generate_corpus,
    sentence_error_rate,
)


def small(**kw):
    base = dict(n_utts=40, seed=3, noise_level=1.0)
    base.update(kw)
    return CorpusConfig(**base)


def decode(cfg, dconf=None):
    return decode_corpus(generate_corpus(cfg), dconf or DecoderConfig(), cfg)


class TestCorpusConfig:
    def test_vocab_size_zero_rejected(self):
        with pytest.raises(InvalidConfigError):
            CorpusConfig(vocab_size=0)

    @pytest.mark.parametrize("kw", [dict(len_range=(4, 2)), dict(len_range=(0, 3)), dict(noise_level=-1.0),
                                    dict(n_utts=-1), dict(ood_fraction=1.5), dict(rate_jitter=-1)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfigError):
            CorpusConfig(**kw)


class TestGenerateCorpus:
    def test_empty(self):
        assert generate_corpus(small(n_utts=0)) == []

    def test_deterministic(self):
        a, b = generate_corpus(small()), generate_corpus(small())
        for x, y in zip(a, b):
            assert x.utt_id == y.utt_id and x.reference == y.reference and x.rate_offset == y.rate_offset
            np.testing.assert_array_equal(x.acoustics.frame_logits, y.acoustics.frame_logits)
            np.testing.assert_array_equal(x.acoustics.att_evidence, y.acoustics.att_evidence)

    def test_items_independent_of_corpus_size(self):
        a = generate_corpus(small(n_utts=5))
        b = generate_corpus(small(n_utts=20))
        for x, y in zip(a, b):
            assert x.reference == y.reference
            np.testing.assert_array_equal(x.acoustics.frame_logits, y.acoustics.frame_logits)

    def test_lengths_in_range(self):
        for it in generate_corpus(small(len_range=(2, 4))):
            assert 2 <= len(it.reference) <= 4

    def test_rate_jitter_sets_frame_count(self):
        cfg = small(frames_per_token=4, rate_jitter=2)
        items = generate_corpus(cfg)
        offsets = {it.rate_offset for it in items}
        assert offsets <= {-2, -1, 0, 1, 2} and len(offsets) > 1
        for it in items:
            rate = 4 + it.rate_offset
            assert it.acoustics.frames_per_token == rate
            assert it.acoustics.n_frames == len(it.reference) * rate

    def test_ood_references_follow_second_bigram(self):
        cfg = small(n_utts=0, ood_fraction=1.0)
        src, ood = SourceBigram.for_corpus(cfg)
        assert not np.allclose(src.trans, ood.trans)


class TestDecodeCorpus:
    def test_noise_free_all_correct(self):
        recs = decode(small(noise_level=0.0))
        assert all(r.label == 1 for r in recs)

    def test_noise_free_all_correct_with_rate_jitter(self):
        recs = decode(small(noise_level=0.0, frames_per_token=4, rate_jitter=2))
        assert sentence_error_rate(recs) == 0.0

    def test_labels_recompute_exactly(self):
        for r in decode(small(noise_level=3.0)):
            assert label_record(r.record) == r.label

    def test_records_carry_decoder_id(self):
        cfg = small(n_utts=5)
        dconf = default_decoder_configs(cfg)["asr_mismatched"]
        assert all(r.record.decoder_config_id == "asr_mismatched" for r in decode(cfg, dconf))

    def test_threads_do_not_change_output(self):
        cfg = small(n_utts=12, noise_level=3.0)
        items = generate_corpus(cfg)
        a = decode_corpus(items, DecoderConfig(), cfg, threads=1)
        b = decode_corpus(items, DecoderConfig(), cfg, threads=2)
        for x, y in zip(a, b):
            assert x.label == y.label and x.record.best.tokens == y.record.best.tokens
            np.testing.assert_array_equal(x.record.best.step_topk_logits, y.record.best.step_topk_logits)

    def test_lms_see_only_in_domain_text(self):
        cfg = small(ood_fraction=0.9)
        d1 = build_decoder(DecoderConfig(), cfg)
        d2 = build_decoder(DecoderConfig(), replace(cfg, ood_fraction=0.0))
        np.testing.assert_array_equal(d1.ngram.counts, d2.ngram.counts)

    def test_extreme_noise(self):
        # ten times the token logit scale
        cfg = CorpusConfig(n_utts=500, seed=11, noise_level=80.0)
        assert sentence_error_rate(decode(cfg)) >= 0.9

    def test_ser_monotone_in_noise(self):
        sers = [sentence_error_rate(decode(CorpusConfig(n_utts=500, seed=5, noise_level=n)))
                for n in (0.0, 1.5, 3.0, 4.5, 6.0)]
        drops = [a - b for a, b in zip(sers, sers[1:]) if b < a]
        assert len(drops) <= 1 and all(d <= 0.02 for d in drops), sers


class TestCalibration:
    def test_hits_target(self):
        cfg = CorpusConfig(seed=2)
        noise, ser = calibrate_noise(cfg, 0.5, tol=0.08, n_probe=150)
        assert abs(ser - 0.5) <= 0.08
        assert 0 < noise < 8

    def test_invalid_target(self):
        with pytest.raises(InvalidConfigError):
            calibrate_noise(CorpusConfig(), 1.5)
