"""Run configuration: YAML sections for corpus, decoders, features, training and evaluation."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from ncmkit.errors import InvalidConfigError, NCMError
from ncmkit.features import FeatureSpec
from ncmkit.jsonfmt import dumps
from ncmkit.metrics import DEFAULT_CURVE_THRESHOLDS
from ncmkit.ncm.train import TrainConfig
from ncmkit.synthgen import CorpusConfig, DecoderConfig

# Corpus preset: SER lands near 0.5 on the matched decoder.
PRESET_CORPUS = dict(n_utts=3000, noise_level=3.2, frames_per_token=4, rate_jitter=2, ood_fraction=0.5)
PRESET_RNNLM_SHARPNESS = 0.3
PRESET_FEATURES = dict(families=("nbest", "ent"), n=10)
PRESET_TRAIN = dict(epochs=60, fusion_mode="ada", temp_mode="ada")


@dataclass(frozen=True)
class EvalConfig:
    """How a decode log is split and scored.

    The first ``n_train`` records of a log train the model; the rest are
    evaluated.
    """

    n_train: int = 2000
    train_decoder: str = "asr_matched"
    thresholds: tuple[float, ...] = DEFAULT_CURVE_THRESHOLDS

    def __post_init__(self):
        if self.n_train < 0:
            raise InvalidConfigError("eval.n_train must be non-negative")
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))


def preset_decoders(corpus: CorpusConfig) -> dict[str, DecoderConfig]:
    return {
        "asr_matched": DecoderConfig(config_id="asr_matched", rnnlm_sharpness=PRESET_RNNLM_SHARPNESS),
        "asr_mismatched": DecoderConfig(
            config_id="asr_mismatched",
            frames_per_token=max(1, corpus.frames_per_token - 1),
            am_seed=1000,
            lm_seed=1,
            rnnlm_sharpness=PRESET_RNNLM_SHARPNESS,
        ),
    }


def _tupled(v):
    if isinstance(v, list):
        return tuple(_tupled(x) for x in v)
    return v


def _build(cls, section: str, values: dict | None, base: dict | None = None):
    """Instantiates dataclass ``cls`` from ``base`` overridden by ``values``; unknown keys fail."""
    values = {} if values is None else values
    if not isinstance(values, dict):
        raise InvalidConfigError(f"section '{section}' must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise InvalidConfigError(f"unknown keys in '{section}': {', '.join(unknown)}")
    kwargs = dict(base or {})
    kwargs.update({k: _tupled(v) for k, v in values.items()})
    try:
        return cls(**kwargs)
    except (NCMError, TypeError, ValueError) as exc:
        raise InvalidConfigError(f"section '{section}': {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    corpus: CorpusConfig = field(default_factory=lambda: CorpusConfig(**PRESET_CORPUS))
    decoders: dict[str, DecoderConfig] = field(default_factory=dict)
    features: FeatureSpec = field(default_factory=lambda: FeatureSpec(**PRESET_FEATURES))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(**PRESET_TRAIN))
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if not self.decoders:
            object.__setattr__(self, "decoders", preset_decoders(self.corpus))
        for key, d in self.decoders.items():
            if d.config_id != key:
                raise InvalidConfigError(f"decoder '{key}' has config_id '{d.config_id}'")
        if self.eval.train_decoder not in self.decoders:
            raise InvalidConfigError(f"eval.train_decoder '{self.eval.train_decoder}' is not a configured decoder")
        if self.features.embed_dim != self.corpus.embed_dim:
            raise InvalidConfigError("features.embed_dim must equal corpus.embed_dim")

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = {} if d is None else d
        if not isinstance(d, dict):
            raise InvalidConfigError("config must be a mapping")
        sections = {"corpus", "decoders", "features", "train", "eval"}
        unknown = sorted(set(d) - sections)
        if unknown:
            raise InvalidConfigError(f"unknown top-level keys: {', '.join(unknown)}")
        corpus = _build(CorpusConfig, "corpus", d.get("corpus"), PRESET_CORPUS)
        decoders = {}
        raw = d.get("decoders")
        if raw is not None:
            if not isinstance(raw, dict) or not raw:
                raise InvalidConfigError("section 'decoders' must map decoder ids to settings")
            for key, vals in raw.items():
                vals = dict(vals or {})
                if vals.setdefault("config_id", key) != key:
                    raise InvalidConfigError(f"decoder '{key}' has config_id '{vals['config_id']}'")
                decoders[key] = _build(DecoderConfig, f"decoders.{key}", vals)
        feats = dict(PRESET_FEATURES, embed_dim=corpus.embed_dim)
        return cls(
            corpus=corpus,
            decoders=decoders,
            features=_build(FeatureSpec, "features", d.get("features"), feats),
            train=_build(TrainConfig, "train", d.get("train"), PRESET_TRAIN),
            eval=_build(EvalConfig, "eval", d.get("eval")),
        )

    def to_dict(self) -> dict[str, Any]:
        """Fully resolved settings, every seed included."""
        return {
            "corpus": dataclasses.asdict(self.corpus),
            "decoders": {k: dataclasses.asdict(v) for k, v in self.decoders.items()},
            "features": self.features.to_dict(),
            "train": self.train.to_dict(),
            "eval": dataclasses.asdict(self.eval),
        }

    @property
    def hash(self) -> str:
        """First 16 hex digits of the SHA-256 of the canonical resolved config."""
        return hashlib.sha256(dumps(self.to_dict()).encode("utf-8")).hexdigest()[:16]

    def with_seed(self, seed: int) -> "RunConfig":
        """Overrides the corpus and training seeds."""
        return replace(self, corpus=replace(self.corpus, seed=int(seed)),
                       train=replace(self.train, seed=int(seed)))

    def decoder(self, config_id: str) -> DecoderConfig:
        if config_id not in self.decoders:
            raise InvalidConfigError(f"no decoder config '{config_id}'; have {sorted(self.decoders)}")
        return self.decoders[config_id]


def load_config(path: str | Path | None) -> RunConfig:
    """Reads a YAML run config; ``None`` gives the presets."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidConfigError(f"{path}: invalid YAML: {exc}") from exc
    return RunConfig.from_dict(data)
