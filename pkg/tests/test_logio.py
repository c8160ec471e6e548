import json

import numpy as np
import pytest

from ncmkit.errors import DecodeLogError
from ncmkit.logio import format_records, parse_decode_log, read_decode_log, read_decode_log_with_header, write_decode_log
from ncmkit.metrics import label_record
from ncmkit.synthgen import CorpusConfig, DecoderConfig, decode_corpus, generate_corpus


@pytest.fixture(scope="module")
def records():
    cfg = CorpusConfig(n_utts=100, seed=13, noise_level=3.0)
    recs = decode_corpus(generate_corpus(cfg), DecoderConfig(capture_all=False), cfg)
    more = decode_corpus(generate_corpus(CorpusConfig(n_utts=3, seed=1, noise_level=2.0)),
                         DecoderConfig(config_id="all", capture_all=True), cfg)
    return recs + more


def assert_same(a, b):
    ra, rb = a.record, b.record
    assert a.label == b.label
    assert (ra.utt_id, ra.reference, ra.enc_frames, ra.decoder_config_id, ra.eos_id) == \
        (rb.utt_id, rb.reference, rb.enc_frames, rb.decoder_config_id, rb.eos_id)
    np.testing.assert_array_equal(ra.enc_embed, rb.enc_embed)
    assert len(ra.nbest) == len(rb.nbest)
    for ha, hb in zip(ra.nbest, rb.nbest):
        assert ha.tokens == hb.tokens
        assert ha.components.tolist() == hb.components.tolist() and ha.combined == hb.combined
        for k in ("step_topk_ids", "step_topk_logits", "step_dec_embed"):
            x, y = getattr(ha, k), getattr(hb, k)
            assert (x is None) == (y is None)
            if x is not None:
                np.testing.assert_array_equal(x, y)


class TestRoundTrip:
    def test_records_equal(self, records, tmp_path):
        path = tmp_path / "log.jsonl"
        write_decode_log(path, records, config_hash="h1")
        back = read_decode_log(path)
        assert len(back) == len(records)
        for a, b in zip(records, back):
            assert_same(a, b)

    def test_bytes_stable(self, records, tmp_path):
        write_decode_log(tmp_path / "a.jsonl", records, "h1")
        write_decode_log(tmp_path / "b.jsonl", read_decode_log(tmp_path / "a.jsonl"), "h1")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_header(self, records, tmp_path):
        write_decode_log(tmp_path / "a.jsonl", records[:2], "abc123")
        head, recs = read_decode_log_with_header(tmp_path / "a.jsonl")
        assert head == {"format": "ncmkit-decode-log", "version": 1, "config_hash": "abc123"}
        assert len(recs) == 2

    def test_labels_recompute(self, records):
        _, back = parse_decode_log(format_records(records))
        assert [label_record(r.record) for r in back] == [r.label for r in records]

    def test_only_best_carries_steps_by_default(self, records):
        line = json.loads(format_records(records[:1]).splitlines()[1])
        assert line["nbest"][0]["step_topk"] is not None
        assert all(h["step_topk"] is None and h["dec_embed"] is None for h in line["nbest"][1:])

    def test_floats_written_at_17_digits(self, records):
        text = format_records(records[:1])
        score = records[0].record.best.score_att
        assert f'"score_att":{score:.17g}' in text

    def test_field_layout(self, records):
        line = json.loads(format_records(records[:1]).splitlines()[1])
        assert set(line) >= {"utt_id", "reference", "enc_frames", "enc_embed", "decoder_config_id",
                             "label", "nbest"}
        assert set(line["nbest"][0]) >= {"tokens", "score_ctc", "score_att", "score_ngram", "score_rnnlm",
                                         "step_topk", "dec_embed"}


class TestParsing:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.jsonl"
        p.write_text("")
        assert read_decode_log(p) == []

    def test_header_only(self):
        assert parse_decode_log(format_records([]))[1] == []

    def _lines(self, records):
        return format_records(records[:3]).splitlines()

    def test_missing_nbest(self, records):
        lines = self._lines(records)
        obj = json.loads(lines[2])
        del obj["nbest"]
        lines[2] = json.dumps(obj)
        with pytest.raises(DecodeLogError) as exc:
            parse_decode_log("\n".join(lines))
        assert exc.value.line == 3 and exc.value.field == "nbest"
        assert "line 3" in str(exc.value)

    @pytest.mark.parametrize("mutate,field", [
        (lambda o: o.__setitem__("label", 2), "label"),
        (lambda o: o.__setitem__("enc_frames", o["enc_frames"] + 1), "enc_embed"),
        (lambda o: o.__setitem__("reference", ["a"]), "reference"),
        (lambda o: o["nbest"][0].pop("score_att"), "nbest[0].score_att"),
        (lambda o: o["nbest"][0].__setitem__("tokens", [1.5]), "nbest[0].tokens"),
        (lambda o: o["nbest"][0]["step_topk"].pop(), "nbest[0].step_topk"),
        (lambda o: o.pop("utt_id"), "utt_id"),
    ])
    def test_field_errors(self, records, mutate, field):
        lines = self._lines(records)
        obj = json.loads(lines[1])
        mutate(obj)
        lines[1] = json.dumps(obj)
        with pytest.raises(DecodeLogError) as exc:
            parse_decode_log("\n".join(lines))
        assert exc.value.line == 2 and exc.value.field == field

    def test_bad_json(self, records):
        lines = self._lines(records)
        lines[3] = lines[3][:-5]
        with pytest.raises(DecodeLogError, match="line 4"):
            parse_decode_log("\n".join(lines))

    def test_wrong_version(self, records):
        lines = self._lines(records)
        lines[0] = json.dumps({"format": "ncmkit-decode-log", "version": 99, "config_hash": None})
        with pytest.raises(DecodeLogError, match="version"):
            parse_decode_log("\n".join(lines))
