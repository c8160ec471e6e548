"""Labels, error rates and detection metrics for confidence scores."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ncmkit.errors import InvalidInputError

log = logging.getLogger(__name__)


class EditCounts(NamedTuple):
    substitutions: int
    deletions: int
    insertions: int

    @property
    def total(self) -> int:
        return self.substitutions + self.deletions + self.insertions


class CER(NamedTuple):
    substitutions: int
    deletions: int
    insertions: int
    cer: float


def edit_counts(reference: Sequence, hypothesis: Sequence) -> EditCounts:
    """Unit-cost Levenshtein alignment split into S/D/I.

    Among minimum-cost alignments the one with the most substitutions is
    chosen (which makes S symmetric in its arguments); remaining ties are
    resolved in the order substitution, insertion, deletion.
    """
    ref, hyp = list(reference), list(hypothesis)
    n, m = len(ref), len(hyp)
    # cost[i, j] and gaps[i, j] = insertions + deletions on the chosen path
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    gaps = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = gaps[:, 0] = np.arange(n + 1)
    cost[0, :] = gaps[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = (cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]), gaps[i - 1, j - 1])
            ins = (cost[i, j - 1] + 1, gaps[i, j - 1] + 1)
            dele = (cost[i - 1, j] + 1, gaps[i - 1, j] + 1)
            cost[i, j], gaps[i, j] = min(sub, ins, dele)

    s = d = ins_n = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = (cost[i, j], gaps[i, j])
        if i > 0 and j > 0:
            diff = int(ref[i - 1] != hyp[j - 1])
            if (cost[i - 1, j - 1] + diff, gaps[i - 1, j - 1]) == here:
                s += diff
                i, j = i - 1, j - 1
                continue
        if j > 0 and (cost[i, j - 1] + 1, gaps[i, j - 1] + 1) == here:
            ins_n += 1
            j -= 1
            continue
        d += 1
        i -= 1
    return EditCounts(s, d, ins_n)


def edit_distance_cer(reference: Sequence, hypothesis: Sequence) -> CER:
    if len(reference) == 0:
        raise InvalidInputError("CER is undefined for an empty reference")
    c = edit_counts(reference, hypothesis)
    return CER(c.substitutions, c.deletions, c.insertions, c.total / len(reference))


def _unwrap(rec):
    return getattr(rec, "record", rec)


def label_record(record) -> int:
    """1 if the best hypothesis (eos stripped) equals the reference exactly, else 0."""
    rec = _unwrap(record)
    return int(rec.best.content(rec.eos_id) == tuple(rec.reference))


def corpus_metrics(records: Sequence) -> tuple[float, float]:
    """Pooled CER (total edits / total reference tokens) and SER."""
    if not records:
        raise InvalidInputError("corpus_metrics needs at least one record")
    edits = ref_tokens = errors = 0
    for r in records:
        rec = _unwrap(r)
        edits += edit_counts(rec.reference, rec.best.content(rec.eos_id)).total
        ref_tokens += len(rec.reference)
        errors += 1 - label_record(rec)
    if ref_tokens == 0:
        raise InvalidInputError("CER is undefined when all references are empty")
    return edits / ref_tokens, errors / len(records)


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise InvalidInputError("scores and labels must be 1-D arrays of equal length")
    if not np.all(np.isin(labels, (0, 1))):
        raise InvalidInputError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InvalidInputError(f"need both classes, got {n_pos} positive and {n_neg} negative")
    return scores, labels, n_pos, n_neg


class ROC(NamedTuple):
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def roc_auc(scores, labels) -> tuple[ROC, float]:
    """ROC points over all distinct thresholds and trapezoidal AUC.

    The first point is (0, 0) at threshold +inf; tied scores move together,
    so the trapezoid counts ties as half wins.
    """
    scores, labels, n_pos, n_neg = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(1 - y)[last_of_group]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[last_of_group]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return ROC(fpr, tpr, thresholds), auc


def operating_points(scores, labels):
    """(thresholds, FAR, FRR) for accept-if-score >= t at each distinct score and +inf."""
    scores, labels, n_pos, n_neg = _check_binary(scores, labels)
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    thresholds = np.r_[np.unique(scores), np.inf]
    far = (n_neg - np.searchsorted(neg, thresholds, side="left")) / n_neg
    frr = np.searchsorted(pos, thresholds, side="left") / n_pos
    return thresholds, far, frr


def eer(scores, labels) -> tuple[float, float]:
    """Equal error rate and the threshold at the FAR/FRR crossing.

    Between adjacent operating points the (FAR, FRR) pair is interpolated
    linearly; the threshold is interpolated the same way (the accept-nothing
    end point is pinned to the largest score).
    """
    thresholds, far, frr = operating_points(scores, labels)
    diff = frr - far  # nondecreasing in the threshold
    j = int(np.argmax(diff >= 0))
    if diff[j] == 0 or j == 0:
        return float(far[j]), float(min(thresholds[j], thresholds[-2]))
    w = -diff[j - 1] / (diff[j] - diff[j - 1])
    value = far[j - 1] + w * (far[j] - far[j - 1])
    t_hi = thresholds[j] if np.isfinite(thresholds[j]) else thresholds[j - 1]
    thr = thresholds[j - 1] + w * (t_hi - thresholds[j - 1])
    return float(value), float(thr)


class CurvePoint(NamedTuple):
    threshold: float
    filtered_cer: float
    n_kept: int


def filtered_cer_curve(confidences, records: Sequence, thresholds) -> list[CurvePoint]:
    """Corpus CER of the utterances whose confidence is at least each threshold.

    Thresholds that keep nothing produce no point.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    thr = np.asarray(thresholds, dtype=np.float64)
    if len(conf) != len(records):
        raise InvalidInputError("confidences and records must be aligned")
    if thr.ndim != 1 or np.any(np.diff(thr) <= 0):
        raise InvalidInputError("thresholds must be strictly increasing")
    edits = np.empty(len(records))
    ref_len = np.empty(len(records))
    for i, r in enumerate(records):
        rec = _unwrap(r)
        edits[i] = edit_counts(rec.reference, rec.best.content(rec.eos_id)).total
        ref_len[i] = len(rec.reference)
    points = []
    for t in thr:
        keep = conf >= t
        n_kept = int(keep.sum())
        if n_kept == 0:
            log.info("threshold %.4f keeps no utterances; point omitted", t)
            continue
        points.append(CurvePoint(float(t), float(edits[keep].sum() / ref_len[keep].sum()), n_kept))
    return points


DEFAULT_CURVE_THRESHOLDS = tuple(np.round(np.linspace(0.0, 0.95, 20), 10))


@dataclass
class EvalReport:
    eer: float
    eer_threshold: float
    auc: float
    cer: float
    ser: float
    n_pos: int
    n_neg: int
    curve: list[CurvePoint] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "auc": self.auc,
            "cer": self.cer,
            "ser": self.ser,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "curve": [list(p) for p in self.curve],
        }


def evaluate(confidences, records: Sequence, thresholds=DEFAULT_CURVE_THRESHOLDS) -> EvalReport:
    labels = np.array([label_record(r) for r in records])
    value, thr = eer(confidences, labels)
    _, auc = roc_auc(confidences, labels)
    cer, ser = corpus_metrics(records)
    return EvalReport(
        eer=value,
        eer_threshold=thr,
        auc=auc,
        cer=cer,
        ser=ser,
        n_pos=int(labels.sum()),
        n_neg=int(len(labels) - labels.sum()),
        curve=filtered_cer_curve(confidences, records, thresholds),
    )
