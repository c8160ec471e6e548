"""Feature-set comparison on synthetic corpora across several seeds."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ncmkit.config import RunConfig
from ncmkit.features import FeatureSpec
from ncmkit.metrics import CurvePoint, eer, filtered_cer_curve, roc_auc
from ncmkit.ncm import predict, train
from ncmkit.synthgen import LabeledRecord, decode_corpus, generate_corpus, sentence_error_rate

log = logging.getLogger(__name__)

# name -> (feature spec kwargs, fusion mode, temperature mode)
STUDY_SETS: dict[str, tuple[dict, str, str]] = {
    "1best_weighted": (dict(families=("nbest",), n=1), "off", "off"),
    "10best_weighted": (dict(families=("nbest",), n=10), "off", "off"),
    "1best_learn_weighted": (dict(families=("nbest",), n=1), "fixed", "off"),
    "10best_ada": (dict(families=("nbest",), n=10), "ada", "off"),
    "ent": (dict(families=("ent",)), "off", "off"),
    "ent_adatemp": (dict(families=("ent",)), "off", "ada"),
    "fused": (dict(families=("nbest", "ent"), n=10), "ada", "ada"),
}


@dataclass
class SetResult:
    eer: float
    eer_threshold: float
    auc: float


@dataclass
class SeedResult:
    seed: int
    train_ser: float
    eval_ser: float
    results: dict[str, SetResult] = field(default_factory=dict)
    fused_curve: list[CurvePoint] = field(default_factory=list)
    oracle_curve: list[CurvePoint] = field(default_factory=list)


def decode_for_seed(config: RunConfig, seed: int) -> list[LabeledRecord]:
    cfg = config.with_seed(seed)
    corpus = generate_corpus(cfg.corpus)
    return decode_corpus(corpus, cfg.decoder(cfg.eval.train_decoder), cfg.corpus)


def run_seed(config: RunConfig, seed: int, sets: Sequence[str] | None = None,
             records: list[LabeledRecord] | None = None) -> SeedResult:
    """Decodes one seeded corpus and trains one model per feature set."""
    cfg = config.with_seed(seed)
    if records is None:
        records = decode_for_seed(config, seed)
    n_train = cfg.eval.n_train
    tr, ev = records[:n_train], records[n_train:]
    y = np.array([r.label for r in ev])
    out = SeedResult(seed=seed, train_ser=sentence_error_rate(tr), eval_ser=sentence_error_rate(ev))
    for name in sets or STUDY_SETS:
        kwargs, fusion, temp = STUDY_SETS[name]
        spec = FeatureSpec(**kwargs, embed_dim=cfg.corpus.embed_dim)
        model, _ = train(tr, replace(cfg.train, fusion_mode=fusion, temp_mode=temp), spec)
        conf = predict(model, ev)
        value, thr = eer(conf, y)
        _, auc = roc_auc(conf, y)
        out.results[name] = SetResult(value, thr, auc)
        log.info("seed %d %s eer=%.4f thr=%.3f auc=%.4f", seed, name, value, thr, auc)
        if name == "fused":
            out.fused_curve = filtered_cer_curve(conf, ev, cfg.eval.thresholds)
    out.oracle_curve = filtered_cer_curve(y.astype(float), ev, cfg.eval.thresholds)
    return out


def run_study(config: RunConfig | None = None, seeds: Sequence[int] = (0, 1, 2, 3, 4)) -> list[SeedResult]:
    config = config or RunConfig()
    return [run_seed(config, s) for s in seeds]
