"""Versioned text serialization of trained models."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ncmkit import FORMAT_VERSION
from ncmkit.errors import InvalidConfigError
from ncmkit.features import FeatureSpec
from ncmkit.jsonfmt import atomic_write_text, dumps
from ncmkit.ncm.model import FusionHead, NCMModel, ResidualFFN, TempHead

MODEL_FORMAT = "ncmkit-model"

_FUSION_ARRAYS = ("theta", "A", "a", "B", "b", "in_mean", "in_scale")
_TEMP_ARRAYS = ("theta", "W", "c", "v", "v0")


def _arr(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": np.asarray(a, dtype=np.float64).reshape(-1)}


def _unarr(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def model_to_dict(model: NCMModel, config_hash: str | None = None) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": FORMAT_VERSION,
        "config_hash": config_hash,
        "feature_spec": model.spec.to_dict(),
        "fusion_mode": model.fusion.mode,
        "temp_mode": model.temp.mode,
        "meta": model.meta,
        "normalizer": {"mean": _arr(model.norm_mean), "scale": _arr(model.norm_scale)},
        "ffn": {k: _arr(v) for k, v in model.ffn.params().items()},
        "fusion": {k: _arr(getattr(model.fusion, k)) for k in _FUSION_ARRAYS},
        "temp": {k: _arr(getattr(model.temp, k)) for k in _TEMP_ARRAYS},
    }


def model_from_dict(d: dict) -> NCMModel:
    if d.get("format") != MODEL_FORMAT:
        raise InvalidConfigError(f"not a model file (format={d.get('format')!r})")
    if d.get("version") != FORMAT_VERSION:
        raise InvalidConfigError(f"unsupported model version {d.get('version')}, expected {FORMAT_VERSION}")
    try:
        spec = FeatureSpec.from_dict(d["feature_spec"])
        ffn = ResidualFFN(**{k: _unarr(v) for k, v in d["ffn"].items()})
        fusion = FusionHead(mode=d["fusion_mode"], **{k: _unarr(d["fusion"][k]) for k in _FUSION_ARRAYS})
        temp = TempHead(mode=d["temp_mode"], **{k: _unarr(d["temp"][k]) for k in _TEMP_ARRAYS})
        return NCMModel(spec, ffn, fusion, temp, _unarr(d["normalizer"]["mean"]),
                        _unarr(d["normalizer"]["scale"]), meta=d.get("meta") or {})
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfigError(f"malformed model file: {exc}") from exc


def save_model(model: NCMModel, path, config_hash: str | None = None) -> None:
    atomic_write_text(path, dumps(model_to_dict(model, config_hash)) + "\n")


def load_model(path) -> NCMModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"{path}: invalid JSON: {exc}") from exc
    return model_from_dict(d)
