"""Newline-delimited JSON decode logs: a header line, then one utterance per line."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ncmkit import FORMAT_VERSION
from ncmkit.errors import DecodeLogError, NCMError
from ncmkit.jsonfmt import atomic_write_text, dumps
from ncmkit.synthgen import LabeledRecord
from ncmkit.toy_asr.types import DecodeRecord, Hypothesis

LOG_FORMAT = "ncmkit-decode-log"
_SCORES = ("score_ctc", "score_att", "score_ngram", "score_rnnlm")


def header(config_hash: str | None) -> dict:
    return {"format": LOG_FORMAT, "version": FORMAT_VERSION, "config_hash": config_hash}


def _hyp_to_dict(h: Hypothesis) -> dict:
    d = {"tokens": list(h.tokens)}
    for k in _SCORES:
        d[k] = getattr(h, k)
    d["combined"] = h.combined
    if h.step_topk_logits is not None:
        d["step_topk"] = [{"ids": ids, "logits": lg}
                          for ids, lg in zip(h.step_topk_ids, h.step_topk_logits)]
    else:
        d["step_topk"] = None
    d["dec_embed"] = h.step_dec_embed
    return d


def record_to_dict(item: LabeledRecord) -> dict:
    rec = item.record
    return {
        "utt_id": rec.utt_id,
        "reference": list(rec.reference),
        "enc_frames": rec.enc_frames,
        "enc_embed": rec.enc_embed,
        "decoder_config_id": rec.decoder_config_id,
        "eos_id": rec.eos_id,
        "label": int(item.label),
        "nbest": [_hyp_to_dict(h) for h in rec.nbest],
    }


def format_records(records: Iterable[LabeledRecord], config_hash: str | None = None) -> str:
    lines = [dumps(header(config_hash))]
    lines.extend(dumps(record_to_dict(r)) for r in records)
    return "\n".join(lines) + "\n"


def write_decode_log(path, records: Sequence[LabeledRecord], config_hash: str | None = None) -> None:
    """Atomically writes ``records`` with a header carrying format version and config hash."""
    atomic_write_text(path, format_records(records, config_hash))


class _Line:
    """Field access helpers that report the line and field on failure."""

    def __init__(self, obj, lineno: int):
        if not isinstance(obj, dict):
            raise DecodeLogError("expected a JSON object", line=lineno)
        self.obj, self.lineno = obj, lineno

    def fail(self, msg: str, field: str):
        raise DecodeLogError(msg, line=self.lineno, field=field)

    def get(self, obj: dict, key: str, field: str | None = None):
        field = field or key
        if not isinstance(obj, dict) or key not in obj:
            self.fail("missing", field)
        return obj[key]

    def int_(self, obj, key, field=None) -> int:
        v = self.get(obj, key, field)
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail("expected an integer", field or key)
        return v

    def float_(self, obj, key, field=None) -> float:
        v = self.get(obj, key, field)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail("expected a number", field or key)
        return float(v)

    def str_(self, obj, key, field=None) -> str:
        v = self.get(obj, key, field)
        if not isinstance(v, str):
            self.fail("expected a string", field or key)
        return v

    def ints(self, v, field) -> tuple[int, ...]:
        if not isinstance(v, list) or any(isinstance(t, bool) or not isinstance(t, int) for t in v):
            self.fail("expected an array of integers", field)
        return tuple(v)

    def matrix(self, v, field, dtype=np.float64) -> np.ndarray:
        if not isinstance(v, list):
            self.fail("expected an array of arrays", field)
        try:
            a = np.array(v, dtype=dtype)
        except (TypeError, ValueError):
            self.fail("expected a rectangular numeric array", field)
        if a.ndim != 2:
            if a.size == 0:
                return a.reshape(0, 0)
            self.fail("expected a rectangular 2-D array", field)
        return a


def _parse_hyp(p: _Line, d, i: int) -> Hypothesis:
    base = f"nbest[{i}]"
    if not isinstance(d, dict):
        p.fail("expected an object", base)
    tokens = p.ints(p.get(d, "tokens", f"{base}.tokens"), f"{base}.tokens")
    scores = [p.float_(d, k, f"{base}.{k}") for k in _SCORES]
    combined = p.float_(d, "combined", f"{base}.combined") if "combined" in d else float("nan")
    ids = logits = dec = None
    steps = d.get("step_topk")
    if steps is not None:
        if not isinstance(steps, list):
            p.fail("expected an array of step objects", f"{base}.step_topk")
        ids = p.matrix([p.get(s, "ids", f"{base}.step_topk.ids") for s in steps],
                       f"{base}.step_topk.ids", dtype=np.int64)
        logits = p.matrix([p.get(s, "logits", f"{base}.step_topk.logits") for s in steps],
                          f"{base}.step_topk.logits")
        if ids.shape != logits.shape or ids.shape[0] != len(tokens):
            p.fail("needs one ids/logits pair of equal length per step", f"{base}.step_topk")
    if d.get("dec_embed") is not None:
        dec = p.matrix(d["dec_embed"], f"{base}.dec_embed")
        if dec.shape[0] != len(tokens):
            p.fail("needs one row per step", f"{base}.dec_embed")
    return Hypothesis(tokens, *scores, combined=combined, step_topk_ids=ids,
                      step_topk_logits=logits, step_dec_embed=dec)


def parse_record(obj, lineno: int) -> LabeledRecord:
    p = _Line(obj, lineno)
    d = p.obj
    nbest_raw = p.get(d, "nbest")
    if not isinstance(nbest_raw, list) or not nbest_raw:
        p.fail("expected a non-empty array", "nbest")
    label = p.int_(d, "label")
    if label not in (0, 1):
        p.fail("must be 0 or 1", "label")
    enc_frames = p.int_(d, "enc_frames")
    enc_embed = p.matrix(p.get(d, "enc_embed"), "enc_embed")
    if enc_embed.shape[0] != enc_frames:
        p.fail(f"has {enc_embed.shape[0]} rows, expected enc_frames={enc_frames}", "enc_embed")
    try:
        rec = DecodeRecord(
            utt_id=p.str_(d, "utt_id"),
            reference=p.ints(p.get(d, "reference"), "reference"),
            nbest=[_parse_hyp(p, h, i) for i, h in enumerate(nbest_raw)],
            enc_frames=enc_frames,
            enc_embed=enc_embed,
            decoder_config_id=p.str_(d, "decoder_config_id"),
            eos_id=p.int_(d, "eos_id") if "eos_id" in d else 1,
        )
    except DecodeLogError:
        raise
    except NCMError as exc:
        raise DecodeLogError(str(exc), line=lineno) from exc
    return LabeledRecord(record=rec, label=label)


def _check_header(obj, lineno: int) -> dict:
    if obj.get("format") != LOG_FORMAT:
        raise DecodeLogError(f"unknown format {obj.get('format')!r}", line=lineno, field="format")
    if obj.get("version") != FORMAT_VERSION:
        raise DecodeLogError(f"unsupported version {obj.get('version')!r}", line=lineno, field="version")
    return obj


def parse_decode_log(text: str) -> tuple[dict | None, list[LabeledRecord]]:
    """(header, records) from decode-log text; the header line is optional."""
    head = None
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DecodeLogError(f"invalid JSON: {exc.msg}", line=lineno) from exc
        if isinstance(obj, dict) and "format" in obj and "nbest" not in obj:
            if head is not None or records:
                raise DecodeLogError("header must be the first line", line=lineno, field="format")
            head = _check_header(obj, lineno)
            continue
        records.append(parse_record(obj, lineno))
    return head, records


def read_decode_log(path) -> list[LabeledRecord]:
    return parse_decode_log(Path(path).read_text(encoding="utf-8"))[1]


def read_decode_log_with_header(path) -> tuple[dict | None, list[LabeledRecord]]:
    return parse_decode_log(Path(path).read_text(encoding="utf-8"))
