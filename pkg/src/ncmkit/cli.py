"""Command-line entry point: synth, decode, extract, train, evaluate, curve, inspect.

Every command reads the same YAML run config; artifacts go to ``--out`` and
carry the config hash and format version. Exit codes: 0 success, 1 usage
error, 2 data or config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from ncmkit import FORMAT_VERSION, __version__
from ncmkit.config import RunConfig, load_config
from ncmkit.errors import InvalidConfigError, NCMError
from ncmkit.features import feature_matrix
from ncmkit.jsonfmt import atomic_write_text, dumps, format_float
from ncmkit.logio import read_decode_log_with_header, write_decode_log
from ncmkit.metrics import EvalReport, evaluate
from ncmkit.ncm import load_model, predict, save_model, train
from ncmkit.ncm.model import NCMModel
from ncmkit.synthgen import CorpusItem, LabeledRecord, decode_corpus, generate_corpus, sentence_error_rate

log = logging.getLogger("ncmkit")

CORPUS_FORMAT = "ncmkit-corpus"
REPORT_FORMAT = "ncmkit-report"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- file layout -------------------------------------------------------------

def corpus_path(out: Path) -> Path:
    return out / "corpus.jsonl"


def log_path(out: Path, decoder_id: str) -> Path:
    return out / f"decode_{decoder_id}.jsonl"


def _check_hash(found: str | None, cfg: RunConfig, what) -> None:
    if found != cfg.hash:
        raise InvalidConfigError(f"{what} was produced with config hash {found}, current config is {cfg.hash}")


def _comment_header(kind: str, cfg: RunConfig, **extra) -> str:
    fields = " ".join([f"format={kind}", f"format_version={FORMAT_VERSION}", f"config_hash={cfg.hash}"]
                      + [f"{k}={v}" for k, v in extra.items()])
    return f"# {fields}\n"


def _csv_text(header_comment: str, rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(header_comment)
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# -- corpus files ------------------------------------------------------------

def write_corpus(path: Path, items: Sequence[CorpusItem], cfg: RunConfig) -> None:
    lines = [dumps({"format": CORPUS_FORMAT, "version": FORMAT_VERSION, "config_hash": cfg.hash})]
    for it in items:
        lines.append(dumps({"utt_id": it.utt_id, "reference": list(it.reference),
                            "utt_seed": it.acoustics.utt_seed, "difficulty": it.acoustics.difficulty,
                            "rate_offset": it.rate_offset}))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_corpus(path: Path, cfg: RunConfig) -> list[CorpusItem]:
    """Re-renders the acoustics of a corpus file through the config's acoustic model."""
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read corpus {path}: {exc}") from exc
    if not lines:
        raise InvalidConfigError(f"{path}: empty corpus file")
    head = json.loads(lines[0])
    if head.get("format") != CORPUS_FORMAT or head.get("version") != FORMAT_VERSION:
        raise InvalidConfigError(f"{path}: not a version-{FORMAT_VERSION} corpus file")
    _check_hash(head.get("config_hash"), cfg, path)
    model = cfg.corpus.acoustic_model()
    items = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            d = json.loads(line)
            rate = max(1, cfg.corpus.frames_per_token + int(d["rate_offset"]))
            ac = model.render(d["reference"], utt_seed=int(d["utt_seed"]),
                              difficulty=float(d["difficulty"]), frames_per_token=rate)
            items.append(CorpusItem(d["utt_id"], tuple(d["reference"]), ac, int(d["rate_offset"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfigError(f"{path}: line {lineno}: {exc}") from exc
    return items


def load_log(path: Path, cfg: RunConfig) -> list[LabeledRecord]:
    try:
        head, records = read_decode_log_with_header(path)
    except OSError as exc:
        raise InvalidConfigError(f"cannot read decode log {path}: {exc}") from exc
    _check_hash(head.get("config_hash") if head else None, cfg, path)
    return records


# -- pipeline pieces ---------------------------------------------------------

def split_records(records: list, cfg: RunConfig) -> tuple[list, list]:
    n = cfg.eval.n_train
    return records[:n], records[n:]


def run_matched_mismatched(cfg: RunConfig, model: NCMModel, logs: dict[str, list[LabeledRecord]],
                           decoder_ids: Sequence[str] = ("asr_matched", "asr_mismatched")) -> dict[str, EvalReport]:
    """Scores one model on the evaluation split of each decoder's log."""
    reports = {}
    for did in decoder_ids:
        cfg.decoder(did)
        if did not in logs:
            raise InvalidConfigError(f"no decode log for decoder '{did}'")
        _, ev = split_records(logs[did], cfg)
        if not ev:
            raise InvalidConfigError(f"decoder '{did}': no records after the first {cfg.eval.n_train}")
        reports[did] = evaluate(predict(model, ev), ev, cfg.eval.thresholds)
    return reports


def _report_dict(report: EvalReport, cfg: RunConfig, decoder_id: str) -> dict:
    return {"format": REPORT_FORMAT, "version": FORMAT_VERSION, "config_hash": cfg.hash,
            "decoder_config_id": decoder_id, **report.as_dict()}


# -- commands ----------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    items = generate_corpus(cfg.corpus)
    write_corpus(corpus_path(args.out), items, cfg)
    print(f"wrote {len(items)} utterances to {corpus_path(args.out)}")
    return 0


def _decoder_ids(args, cfg: RunConfig) -> list[str]:
    ids = args.decoder or list(cfg.decoders)
    for did in ids:
        cfg.decoder(did)
    return ids


def cmd_decode(args, cfg: RunConfig) -> int:
    items = read_corpus(corpus_path(args.out), cfg)
    for did in _decoder_ids(args, cfg):
        records = decode_corpus(items, cfg.decoder(did), cfg.corpus, threads=args.threads)
        write_decode_log(log_path(args.out, did), records, cfg.hash)
        print(f"{did}: {len(records)} records, SER {sentence_error_rate(records):.4f}")
    return 0


def cmd_extract(args, cfg: RunConfig) -> int:
    for did in _decoder_ids(args, cfg):
        records = load_log(log_path(args.out, did), cfg)
        x = feature_matrix(records, cfg.features) if records else []
        rows = [["utt_id", "label", *cfg.features.names]]
        for r, v in zip(records, x):
            rows.append([r.record.utt_id, r.label, *[float(t) for t in v]])
        path = args.out / f"features_{did}.csv"
        atomic_write_text(path, _csv_text(_comment_header("ncmkit-features", cfg, decoder=did), rows))
        print(f"wrote {len(records)} feature rows to {path}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    did = cfg.eval.train_decoder
    tr, _ = split_records(load_log(log_path(args.out, did), cfg), cfg)
    model, history = train(tr, cfg.train, cfg.features)
    path = args.model or args.out / "model.json"
    save_model(model, path, cfg.hash)
    rows = [["epoch", "train_loss", "heldout_loss"]] + [[h["epoch"], h["train_loss"], h["heldout_loss"]]
                                                        for h in history]
    atomic_write_text(args.out / "train_log.csv", _csv_text(_comment_header("ncmkit-train-log", cfg), rows))
    print(f"trained on {len(tr)} records, best epoch {model.meta.get('best_epoch')}, saved {path}")
    return 0


def _load_checked_model(args, cfg: RunConfig) -> NCMModel:
    path = args.model or args.out / "model.json"
    try:
        with open(path, encoding="utf-8") as fh:
            found = json.load(fh).get("config_hash")
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfigError(f"cannot read model {path}: {exc}") from exc
    _check_hash(found, cfg, path)
    return load_model(path)


def _eval_reports(args, cfg: RunConfig) -> dict[str, EvalReport]:
    model = _load_checked_model(args, cfg)
    ids = _decoder_ids(args, cfg)
    logs = {did: load_log(log_path(args.out, did), cfg) for did in ids}
    return run_matched_mismatched(cfg, model, logs, ids)


def cmd_evaluate(args, cfg: RunConfig) -> int:
    for did, rep in _eval_reports(args, cfg).items():
        if args.format == "csv":
            keys = ["eer", "eer_threshold", "auc", "cer", "ser", "n_pos", "n_neg"]
            rows = [["decoder_config_id", *keys], [did, *[getattr(rep, k) for k in keys]]]
            path = args.out / f"report_{did}.csv"
            atomic_write_text(path, _csv_text(_comment_header(REPORT_FORMAT, cfg), rows))
        else:
            path = args.out / f"report_{did}.json"
            atomic_write_text(path, dumps(_report_dict(rep, cfg, did)) + "\n")
        print(f"{did}: eer {rep.eer:.4f} auc {rep.auc:.4f} ser {rep.ser:.4f} -> {path}")
    return 0


def cmd_curve(args, cfg: RunConfig) -> int:
    for did, rep in _eval_reports(args, cfg).items():
        rows = [["threshold", "filtered_cer", "n_kept"]] + [[p.threshold, p.filtered_cer, p.n_kept]
                                                           for p in rep.curve]
        path = args.out / f"curve_{did}.csv"
        atomic_write_text(path, _csv_text(_comment_header("ncmkit-curve", cfg, decoder=did), rows))
        print(f"wrote {len(rep.curve)} curve points to {path}")
    return 0


def cmd_inspect(args, cfg: RunConfig | None) -> int:
    path = Path(args.path)
    try:
        first = path.open(encoding="utf-8").readline()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read {path}: {exc}") from exc
    try:
        head = json.loads(first) if first.strip() else {}
    except json.JSONDecodeError:
        head = {}
    kind = head.get("format")
    if kind == "ncmkit-model":
        m = load_model(path)
        info = {"format": kind, "version": head.get("version"), "config_hash": head.get("config_hash"),
                "feature_spec": m.spec.to_dict(), "fusion_mode": m.fusion.mode,
                "temp_mode": m.temp.mode, "input_dim": m.spec.dim, "best_epoch": m.meta.get("best_epoch")}
    elif kind == "ncmkit-decode-log" or "nbest" in head or not first.strip():
        h, records = read_decode_log_with_header(path)
        info = {"format": "ncmkit-decode-log", "version": h and h.get("version"),
                "config_hash": h and h.get("config_hash"), "n_records": len(records),
                "n_pos": sum(r.label for r in records),
                "decoders": sorted({r.record.decoder_config_id for r in records}),
                "ser": sentence_error_rate(records)}
    elif kind in (CORPUS_FORMAT, REPORT_FORMAT):
        n = sum(1 for _ in path.open(encoding="utf-8")) - 1
        info = dict(head) if kind == REPORT_FORMAT else {**head, "n_utts": n}
        info.pop("curve", None)
    else:
        raise InvalidConfigError(f"{path}: unrecognized file")
    if args.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["key", "value"])
        for k, v in info.items():
            w.writerow([k, v if not isinstance(v, (dict, list)) else dumps(v)])
    else:
        print(json.dumps(info, indent=2, default=str))
    return 0


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic corpus"),
    "decode": (cmd_decode, "decode the corpus with each configured decoder"),
    "extract": (cmd_extract, "write predictor features as CSV"),
    "train": (cmd_train, "train a confidence model on the training split"),
    "evaluate": (cmd_evaluate, "score the model on each decoder's evaluation split"),
    "curve": (cmd_curve, "write filtered-CER curves as CSV"),
    "inspect": (cmd_inspect, "summarize a corpus, decode log, model or report file"),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ncmkit", description="Confidence estimation for a toy CTC-attention recognizer.")
    p.add_argument("--version", action="version", version=f"ncmkit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        if name == "inspect":
            sp.add_argument("path", help="file to summarize")
            sp.add_argument("--format", choices=("csv", "report"), default="report")
            continue
        sp.add_argument("--config", type=Path, help="YAML run config (presets when omitted)")
        sp.add_argument("--out", type=Path, required=True, help="artifact directory")
        sp.add_argument("--seed", type=int, help="override the corpus and training seeds")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for decoding")
        sp.add_argument("--format", choices=("csv", "report"), default="report")
        if name in ("decode", "extract", "evaluate", "curve"):
            sp.add_argument("--decoder", action="append", help="decoder config id (repeatable; default all)")
        if name in ("train", "evaluate", "curve"):
            sp.add_argument("--model", type=Path, help="model file (default OUT/model.json)")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        if args.command == "inspect":
            return func(args, None)
        if args.threads < 1:
            print("ncmkit: error: --threads must be positive", file=sys.stderr)
            return 1
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        return func(args, cfg)
    except (NCMError, ValueError, OSError) as exc:
        print(f"ncmkit {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
