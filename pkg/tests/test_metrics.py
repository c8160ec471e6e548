
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import det_points_bruteforce, eer_geometric, levenshtein_bruteforce, pairwise_auc
from sklearn.metrics import roc_auc_score

from ncmkit.errors import InvalidInputError
from ncmkit.metrics import (
    corpus_metrics,
    edit_counts,
    edit_distance_cer,
    eer,
    evaluate,
    filtered_cer_curve,
    label_record,
    roc_auc,
)
from ncmkit.toy_asr.types import DecodeRecord, Hypothesis

EOS = 1


def make_record(ref, hyp, utt_id="u"):
    h = Hypothesis(tokens=tuple(hyp) + (EOS,), score_ctc=-1.0, score_att=-1.0, score_ngram=-1.0,
                   score_rnnlm=-1.0, combined=-2.0)
    return DecodeRecord(utt_id=utt_id, reference=tuple(ref), nbest=[h], enc_frames=1,
                        enc_embed=np.zeros((1, 2)), decoder_config_id="t", eos_id=EOS)


SCORES = [0.9, 0.8, 0.7, 0.3, 0.2, 0.1]
LABELS = [1, 1, 0, 1, 0, 0]


class TestEditDistance:
    def test_identical(self):
        assert edit_distance_cer("abc", "abc") == (0, 0, 0, 0.0)

    def test_all_deleted(self):
        assert edit_distance_cer("abc", "") == (0, 3, 0, 1.0)

    def test_kitten_sitting(self):
        c = edit_counts("kitten", "sitting")
        assert c.total == 3 == levenshtein_bruteforce("kitten", "sitting")
        assert c == (2, 0, 1)

    def test_empty_reference(self):
        with pytest.raises(InvalidInputError):
            edit_distance_cer("", "ab")
        assert edit_counts("", "ab") == (0, 0, 2)

    @settings(max_examples=150, deadline=None)
    @given(st.text("abc", max_size=5), st.text("abc", max_size=5))
    def test_matches_bruteforce(self, a, b):
        want = levenshtein_bruteforce(a, b, max_depth=5)
        assert edit_counts(a, b).total == want

    @settings(max_examples=200)
    @given(st.lists(st.integers(0, 3), max_size=8), st.lists(st.integers(0, 3), max_size=8))
    def test_swap_symmetry(self, a, b):
        x, y = edit_counts(a, b), edit_counts(b, a)
        assert x.total == y.total
        assert x.substitutions == y.substitutions
        assert (x.deletions, x.insertions) == (y.insertions, y.deletions)


class TestLabels:
    def test_exact_match(self):
        assert label_record(make_record([2, 3], [2, 3])) == 1

    def test_substitution(self):
        assert label_record(make_record([2, 3], [2, 4])) == 0

    def test_eos_stripped(self):
        rec = make_record([2, 3], [2, 3])
        assert rec.best.tokens[-1] == EOS
        assert label_record(rec) == 1


class TestCorpusMetrics:
    def test_all_correct(self):
        recs = [make_record([2, 3], [2, 3]), make_record([4], [4])]
        assert corpus_metrics(recs) == (0.0, 0.0)

    def test_all_empty_hypotheses(self):
        recs = [make_record([2, 3], []), make_record([4], [])]
        assert corpus_metrics(recs) == (1.0, 1.0)

    def test_hand_computed(self):
        recs = [
            make_record([2, 3, 4], [2, 3, 4]),  # 0 edits
            make_record([2, 3], [2, 5, 3]),  # 1 insertion
            make_record([2, 3, 4, 5, 6], [3, 4, 2]),  # del 2, sub 5->2, del 6 : 3 edits
        ]
        cer, ser = corpus_metrics(recs)
        assert cer == pytest.approx(4 / 10)
        assert ser == pytest.approx(2 / 3)


class TestROC:
    def test_separated(self):
        assert roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])[1] == 1.0

    def test_all_tied(self):
        assert roc_auc([0.5] * 6, [1, 0, 1, 0, 1, 1])[1] == 0.5

    def test_hand_example(self):
        assert roc_auc(SCORES, LABELS)[1] == pytest.approx(8 / 9, abs=1e-15)
        assert pairwise_auc(SCORES, LABELS) == pytest.approx(8 / 9, abs=1e-15)

    def test_single_class(self):
        with pytest.raises(InvalidInputError):
            roc_auc([0.1, 0.2], [1, 1])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 60), st.booleans())
    def test_matches_pairwise_and_sklearn(self, seed, n, discrete):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, 5, size=n) / 4 if discrete else rng.uniform(size=n)
        auc = roc_auc(scores, labels)[1]
        assert abs(auc - pairwise_auc(scores, labels)) <= 1e-12
        assert auc == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(0)
        s = rng.normal(size=200)
        y = (s + rng.normal(size=200) > 0).astype(int)
        a = roc_auc(s, y)[1]
        assert roc_auc(np.exp(3 * s) + 1, y)[1] == pytest.approx(a, abs=1e-15)


class TestEER:
    def test_separated(self):
        assert eer([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])[0] == 0.0

    def test_hand_example(self):
        value, thr = eer(SCORES, LABELS)
        assert value == pytest.approx(1 / 3, abs=1e-15)
        assert 0.3 < thr <= 0.7

    def test_hand_example_exhaustive_sweep(self):
        for t, far, frr in det_points_bruteforce(SCORES, LABELS):
            if 0.3 < t <= 0.7:
                assert far == frr == pytest.approx(1 / 3)

    def test_anti_correlated(self):
        value, _ = eer([0.1, 0.2, 0.3, 0.7, 0.8, 0.9], [1, 1, 1, 0, 0, 0])
        assert value == 1.0

    def test_single_class(self):
        with pytest.raises(InvalidInputError):
            eer([0.1, 0.2], [0, 0])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 80), st.booleans())
    def test_matches_geometric_oracle(self, seed, n, discrete):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, 6, size=n) / 5 if discrete else rng.uniform(size=n)
        assert abs(eer(scores, labels)[0] - eer_geometric(scores, labels)) <= 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.integers(4, 80))
    def test_far_frr_close_at_threshold(self, seed, n):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        scores = rng.uniform(size=n)
        _, thr = eer(scores, labels)
        pos, neg = scores[labels == 1], scores[labels == 0]
        far = np.mean(neg >= thr)
        frr = np.mean(pos < thr)
        assert abs(far - frr) <= 1 / min(len(pos), len(neg)) + 1e-12

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        s = rng.normal(size=300)
        y = (s + rng.normal(size=300) > 0).astype(int)
        assert eer(np.tanh(s) * 5 - 2, y)[0] == pytest.approx(eer(s, y)[0], abs=1e-12)


class TestFilteredCER:
    def setup_method(self):
        self.records = [
            make_record([2, 3], [2, 3]),
            make_record([2, 3, 4], [2, 4]),
            make_record([5, 6], [5, 6]),
            make_record([2, 2], [3, 3, 3]),
        ]

    def test_low_threshold_is_corpus_cer(self):
        conf = [0.9, 0.4, 0.8, 0.2]
        pts = filtered_cer_curve(conf, self.records, [0.0])
        assert pts[0].filtered_cer == pytest.approx(corpus_metrics(self.records)[0])
        assert pts[0].n_kept == 4

    def test_oracle_confidence(self):
        conf = [label_record(r) for r in self.records]
        pts = filtered_cer_curve(conf, self.records, [0.5])
        assert pts[0].filtered_cer == 0.0
        assert pts[0].n_kept == 2

    def test_empty_point_omitted(self):
        pts = filtered_cer_curve([0.1, 0.2, 0.3, 0.4], self.records, [0.0, 0.5])
        assert [p.threshold for p in pts] == [0.0]

    def test_unsorted_thresholds(self):
        with pytest.raises(InvalidInputError):
            filtered_cer_curve([0.1] * 4, self.records, [0.5, 0.2])

    def test_oracle_curve_nonincreasing(self):
        rng = np.random.default_rng(1)
        recs = []
        for i in range(200):
            ref = list(rng.integers(2, 6, size=rng.integers(1, 6)))
            hyp = list(ref)
            if rng.uniform() < 0.5:
                hyp[int(rng.integers(len(hyp)))] = 9
            recs.append(make_record(ref, hyp, f"u{i}"))
        conf = np.array([label_record(r) for r in recs], dtype=float)
        pts = filtered_cer_curve(conf, recs, np.linspace(0, 1, 11))
        cers = [p.filtered_cer for p in pts]
        assert all(b <= a for a, b in zip(cers, cers[1:]))


def test_evaluate_report():
    rng = np.random.default_rng(0)
    recs = []
    for i in range(40):
        ref = [2, 3, 4]
        hyp = ref if i % 3 else [2, 5, 4]
        recs.append(make_record(ref, hyp, f"u{i}"))
    conf = np.array([0.8 if i % 3 else 0.3 for i in range(40)]) + rng.normal(scale=0.1, size=40)
    rep = evaluate(conf, recs)
    assert rep.n_pos + rep.n_neg == 40
    assert rep.n_neg == 14
    assert 0.0 <= rep.eer <= 1.0 and 0.0 <= rep.auc <= 1.0
    assert rep.ser == pytest.approx(14 / 40)
    ts = [p.threshold for p in rep.curve]
    assert all(b > a for a, b in zip(ts, ts[1:]))
