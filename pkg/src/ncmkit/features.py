"""Predictor features extracted from a decode record.

Each feature family maps a :class:`DecodeRecord` to a fixed-length block of
named values; :func:`assemble_features` concatenates the enabled blocks in
the order the :class:`FeatureSpec` lists them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ncmkit.errors import ExtractionError, InvalidInputError
from ncmkit.toy_asr.search import DEFAULT_WEIGHTS, check_weights
from ncmkit.toy_asr.types import DecodeRecord, Hypothesis

COMPONENTS = ("ctc", "att", "ngram", "rnnlm")
FAMILIES = COMPONENTS + ("nbest", "avg_dur", "ent", "prob", "encfeat", "decfeat")
NBEST_MODES = ("weighted", "per_component")
PROB_MODES = ("avg_vec", "seq_stats")
POOLINGS = ("mean",)
STEP_FAMILIES = ("ent", "prob", "decfeat")


@dataclass(frozen=True)
class FeatureSpec:
    """Which feature families to extract, in which order, and their sizes.

    Attributes:
        families: Enabled families, in output order. Component names
            (``ctc``, ``att``, ``ngram``, ``rnnlm``) are the normalized
            scores of the best hypothesis.
        n: N-best depth of the ``nbest`` family.
        K: Top-K width used by ``ent`` and ``prob``.
        nbest_mode: ``weighted`` (one fused score per hypothesis) or
            ``per_component`` (four normalized scores per hypothesis).
        pooling: How embedding sequences are reduced to one vector.
        prob_mode: ``avg_vec`` (mean probability per rank) or ``seq_stats``
            (mean, std, min and max per rank).
        weights: Static (ctc, att, ngram, rnnlm) weights for ``weighted`` mode.
        embed_dim: Width of encoder and decoder embeddings.
    """

    families: tuple[str, ...] = ("nbest",)
    n: int = 10
    K: int = 20
    nbest_mode: str = "weighted"
    pooling: str = "mean"
    prob_mode: str = "avg_vec"
    weights: tuple[float, float, float, float] = DEFAULT_WEIGHTS
    embed_dim: int = 16

    def __post_init__(self):
        fams = tuple(self.families)
        if not fams:
            raise InvalidInputError("feature spec enables no families")
        unknown = [f for f in fams if f not in FAMILIES]
        if unknown:
            raise InvalidInputError(f"unknown feature families {unknown}; known: {FAMILIES}")
        if len(set(fams)) != len(fams):
            raise InvalidInputError(f"duplicate feature families in {fams}")
        if self.n < 1 or self.K < 1 or self.embed_dim < 1:
            raise InvalidInputError("n, K and embed_dim must be positive")
        if self.nbest_mode not in NBEST_MODES:
            raise InvalidInputError(f"nbest_mode must be one of {NBEST_MODES}")
        if self.prob_mode not in PROB_MODES:
            raise InvalidInputError(f"prob_mode must be one of {PROB_MODES}")
        if self.pooling not in POOLINGS:
            raise InvalidInputError(f"pooling must be one of {POOLINGS}")
        object.__setattr__(self, "families", fams)
        object.__setattr__(self, "weights", check_weights(self.weights))

    def family_names(self, family: str) -> list[str]:
        if family in COMPONENTS or family in ("avg_dur", "ent"):
            return [family]
        if family == "nbest":
            if self.nbest_mode == "weighted":
                return [f"nbest_weighted_{i + 1}" for i in range(self.n)]
            return [f"nbest_{c}_{i + 1}" for i in range(self.n) for c in COMPONENTS]
        if family == "prob":
            if self.prob_mode == "avg_vec":
                return [f"prob_avg_{r + 1}" for r in range(self.K)]
            return [f"prob_{s}_{r + 1}" for s in ("mean", "std", "min", "max") for r in range(self.K)]
        prefix = "enc" if family == "encfeat" else "dec"
        return [f"{prefix}_{j + 1}" for j in range(self.embed_dim)]

    @property
    def names(self) -> list[str]:
        out: list[str] = []
        for fam in self.families:
            out.extend(self.family_names(fam))
        return out

    @property
    def dim(self) -> int:
        return len(self.names)

    def slices(self) -> dict[str, slice]:
        """Column range of each family in the assembled vector."""
        out, start = {}, 0
        for fam in self.families:
            width = len(self.family_names(fam))
            out[fam] = slice(start, start + width)
            start += width
        return out

    @property
    def needs_steps(self) -> bool:
        return any(f in STEP_FAMILIES for f in self.families)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["families"] = list(self.families)
        d["weights"] = list(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        d = dict(d)
        d["families"] = tuple(d.get("families", ()))
        if "weights" in d:
            d["weights"] = tuple(d["weights"])
        return cls(**d)


@dataclass(frozen=True)
class FeatureVector:
    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise InvalidInputError("names and values differ in length")
        if not np.all(np.isfinite(self.values)):
            bad = [n for n, v in zip(self.names, self.values) if not np.isfinite(v)]
            raise ExtractionError(f"non-finite feature values: {bad[:5]}")


# -- scalar and vector primitives ------------------------------------------


def normalize_score(score: float, token_count: int) -> float:
    """Per-token score; ``token_count`` includes eos."""
    if token_count < 1:
        raise InvalidInputError(f"token_count must be >= 1, got {token_count}")
    return score / token_count


def component_scores(record: DecodeRecord) -> np.ndarray:
    """Normalized (ctc, att, ngram, rnnlm) scores of the best hypothesis."""
    return _normalized_components(record.best)


def _normalized_components(hyp: Hypothesis) -> np.ndarray:
    return normalize_score(hyp.components, hyp.n_steps)


def nbest_components(record: DecodeRecord, n: int) -> np.ndarray:
    """(n, 4) normalized component scores, padded by repeating the worst hypothesis."""
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    rows = [_normalized_components(h) for h in record.nbest[:n]]
    rows.extend([rows[-1]] * (n - len(rows)))
    return np.array(rows)


def nbest_score_vector(record: DecodeRecord, n: int, mode: str = "weighted",
                       weights: Sequence[float] = DEFAULT_WEIGHTS) -> np.ndarray:
    """Top-n hypothesis scores: ``n`` fused values or ``4n`` per-component values."""
    comps = nbest_components(record, n)
    if mode == "weighted":
        return comps @ np.asarray(check_weights(weights))
    if mode == "per_component":
        return comps.reshape(-1)
    raise InvalidInputError(f"unknown nbest mode {mode!r}")


def softmax_with_temperature(logits, tau) -> np.ndarray:
    """Softmax of ``logits / tau`` along the last axis.

    ``tau`` is a scalar or broadcasts against ``logits[..., :1]``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(~(tau > 0)):
        raise InvalidInputError("temperature must be positive")
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("logits must be finite")
    q = logits / tau
    q = q - q.max(axis=-1, keepdims=True)
    e = np.exp(q)
    return e / e.sum(axis=-1, keepdims=True)


def _step_taus(taus, n_steps: int) -> np.ndarray:
    t = np.asarray(taus, dtype=np.float64)
    if t.ndim == 0:
        return np.full((n_steps, 1), float(t))
    if t.shape != (n_steps,):
        raise InvalidInputError(f"expected {n_steps} per-step temperatures, got shape {t.shape}")
    return t[:, None]


def _entropy(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    return -plogp.sum(axis=-1)


def token_entropy(step_topk_logits, taus=1.0) -> tuple[np.ndarray, float]:
    """Per-step entropy (nats) of the temperature-scaled top-K distribution and its mean."""
    logits = np.atleast_2d(np.asarray(step_topk_logits, dtype=np.float64))
    if logits.shape[-1] < 1 or logits.shape[0] < 1:
        raise InvalidInputError("need at least one step with at least one logit")
    p = softmax_with_temperature(logits, _step_taus(taus, logits.shape[0]))
    h = _entropy(p)
    return h, float(h.mean())


def prob_summary(step_topk_logits, taus=1.0, mode: str = "avg_vec") -> np.ndarray:
    """Rank-wise summary of the per-step probability vectors.

    ``avg_vec`` gives the K-vector of means; ``seq_stats`` gives the 4K-vector
    of (mean, population std, min, max) blocks.
    """
    logits = np.atleast_2d(np.asarray(step_topk_logits, dtype=np.float64))
    if np.any(np.diff(logits, axis=1) > 0):
        raise InvalidInputError("step logits must be sorted in descending order")
    p = softmax_with_temperature(logits, _step_taus(taus, logits.shape[0]))
    if mode == "avg_vec":
        return p.mean(axis=0)
    if mode == "seq_stats":
        return np.concatenate([p.mean(axis=0), p.std(axis=0), p.min(axis=0), p.max(axis=0)])
    raise InvalidInputError(f"unknown prob mode {mode!r}")


def pool_embedding(vectors) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] == 0:
        raise InvalidInputError("need a non-empty sequence of vectors")
    return v.mean(axis=0)


def avg_token_duration(record: DecodeRecord) -> float:
    """Encoder frames per decoded step (T'/U) of the best hypothesis."""
    u = record.best.n_steps
    if u < 1:
        raise InvalidInputError("best hypothesis has no steps")
    return record.enc_frames / u


# -- assembly --------------------------------------------------------------


def step_logits(record: DecodeRecord, K: int) -> np.ndarray:
    """The first K captured logits per step of the best hypothesis."""
    best = record.best
    if best.step_topk_logits is None:
        raise ExtractionError(f"{record.utt_id}: best hypothesis has no captured top-K logits")
    logits = np.asarray(best.step_topk_logits, dtype=np.float64)
    if logits.shape[1] < K:
        raise ExtractionError(
            f"{record.utt_id}: spec asks for K={K} but only {logits.shape[1]} logits were captured")
    return logits[:, :K]


def step_embeddings(record: DecodeRecord) -> np.ndarray:
    best = record.best
    if best.step_dec_embed is None:
        raise ExtractionError(f"{record.utt_id}: best hypothesis has no decoder embeddings")
    return np.asarray(best.step_dec_embed, dtype=np.float64)


def _check_embed(record: DecodeRecord, emb: np.ndarray, spec: FeatureSpec, what: str):
    if emb.ndim != 2 or emb.shape[1] != spec.embed_dim:
        raise ExtractionError(
            f"{record.utt_id}: {what} width {emb.shape[-1]} does not match embed_dim {spec.embed_dim}")


def family_values(record: DecodeRecord, spec: FeatureSpec, family: str,
                  weights: Sequence[float] | None = None, taus=1.0) -> np.ndarray:
    """One family's block under the given fusion weights and temperatures."""
    if family in COMPONENTS:
        return component_scores(record)[COMPONENTS.index(family)][None]
    if family == "nbest":
        return nbest_score_vector(record, spec.n, spec.nbest_mode, weights or spec.weights)
    if family == "avg_dur":
        return np.array([avg_token_duration(record)])
    if family == "ent":
        return np.array([token_entropy(step_logits(record, spec.K), taus)[1]])
    if family == "prob":
        return prob_summary(step_logits(record, spec.K), taus, spec.prob_mode)
    if family == "encfeat":
        emb = np.asarray(record.enc_embed, dtype=np.float64)
        _check_embed(record, emb, spec, "encoder embedding")
        return pool_embedding(emb)
    if family == "decfeat":
        emb = step_embeddings(record)
        _check_embed(record, emb, spec, "decoder embedding")
        return pool_embedding(emb)
    raise InvalidInputError(f"unknown family {family!r}")


def assemble_features(record: DecodeRecord, spec: FeatureSpec,
                      weights: Sequence[float] | None = None, taus=1.0) -> FeatureVector:
    """Concatenates the enabled families in spec order.

    Uses the spec's static weights and unit temperature unless overridden.
    """
    blocks = [family_values(record, spec, fam, weights, taus) for fam in spec.families]
    return FeatureVector(names=tuple(spec.names), values=np.concatenate(blocks))


def feature_matrix(records: Sequence, spec: FeatureSpec) -> np.ndarray:
    """Stacked static feature vectors, one row per record."""
    rows = [assemble_features(getattr(r, "record", r), spec).values for r in records]
    if not rows:
        return np.zeros((0, spec.dim))
    return np.vstack(rows)
