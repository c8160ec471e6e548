"""Mini-batch Adam training with a stratified held-out split."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ncmkit.errors import InvalidConfigError, InvalidDatasetError
from ncmkit.features import FeatureSpec
from ncmkit.ncm.model import Batch, NCMModel, batch_loss, compute_gradients, init_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Training and model-shape settings.

    ``alpha_pos=None`` sets the positive-class weight to the negative-class
    frequency of the training split.
    """

    lr: float = 1e-3
    epochs: int = 40
    batch_size: int = 64
    gamma: float = 2.0
    alpha_pos: float | None = None
    seed: int = 0
    hidden: int = 128
    fusion_mode: str = "off"
    temp_mode: str = "off"
    fusion_hidden: int = 8
    temp_hidden: int = 8
    heldout_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0 or self.hidden < 1:
            raise InvalidConfigError("lr, batch_size and hidden must be positive; epochs non-negative")
        if self.gamma < 0:
            raise InvalidConfigError("gamma must be non-negative")
        if self.alpha_pos is not None and not 0.0 < self.alpha_pos <= 1.0:
            raise InvalidConfigError("alpha_pos must lie in (0, 1]")
        if not 0.0 <= self.heldout_fraction < 1.0:
            raise InvalidConfigError("heldout_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def stratified_split(labels: np.ndarray, fraction: float, rng: np.random.Generator):
    """(train_idx, heldout_idx) with ``fraction`` of each class held out."""
    held = []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n = int(round(fraction * len(idx)))
        if fraction > 0 and len(idx) > 1:
            n = max(n, 1)
        held.append(idx[:n])
    held_idx = np.sort(np.concatenate(held))
    train_idx = np.setdiff1d(np.arange(len(labels)), held_idx)
    return train_idx, held_idx


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train(data, config: TrainConfig, spec: FeatureSpec | None = None) -> tuple[NCMModel, list[dict]]:
    """Trains a model and returns the best held-out checkpoint and the loss log.

    Args:
        data: A :class:`Batch` with labels, or a list of LabeledRecords
            (``spec`` is then required).
        config: Training settings.
        spec: Feature spec, when ``data`` is a list of records.

    Returns:
        The model with the lowest held-out loss (training loss when there is
        no held-out split) and one log entry per epoch.
    """
    if isinstance(data, Batch):
        if spec is None:
            raise InvalidConfigError("a feature spec is required alongside a prebuilt batch")
        batch = data
    else:
        if spec is None:
            raise InvalidConfigError("a feature spec is required to extract features")
        batch = Batch.from_records(data, spec)
    if batch.labels is None:
        raise InvalidDatasetError("training data has no labels")
    labels = batch.labels
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InvalidDatasetError(f"training data needs both classes, got {n_pos} positive and {n_neg} negative")

    rng = np.random.default_rng([config.seed, 1729])
    train_idx, held_idx = stratified_split(labels, config.heldout_fraction, rng)
    train_b = batch.take(train_idx)
    held_b = batch.take(held_idx) if len(held_idx) else None
    alpha = config.alpha_pos
    if alpha is None:
        alpha = float(np.mean(train_b.labels == 0))
        alpha = min(max(alpha, 1e-6), 1.0)

    model = init_model(spec, hidden=config.hidden, fusion_mode=config.fusion_mode,
                       temp_mode=config.temp_mode, seed=config.seed,
                       fusion_hidden=config.fusion_hidden, temp_hidden=config.temp_hidden,
                       norm_batch=train_b)
    model.meta.update({"train_config": config.to_dict(), "alpha_pos": alpha,
                       "optimizer": {"name": "adam", "lr": config.lr, "beta1": config.beta1,
                                     "beta2": config.beta2, "eps": config.adam_eps}})
    opt = Adam(model.params(), config.lr, config.beta1, config.beta2, config.adam_eps)
    history: list[dict] = []
    best, best_loss = model.copy(), np.inf
    n = len(train_b)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            mb = train_b.take(order[start:start + config.batch_size])
            _, grads = compute_gradients(model, mb, alpha, config.gamma)
            opt.step(grads)
        train_loss = batch_loss(model, train_b, alpha, config.gamma)
        held_loss = batch_loss(model, held_b, alpha, config.gamma) if held_b is not None else train_loss
        history.append({"epoch": epoch + 1, "train_loss": train_loss, "heldout_loss": held_loss})
        log.debug("epoch %d train %.5f heldout %.5f", epoch + 1, train_loss, held_loss)
        if held_loss < best_loss:
            best, best_loss = model.copy(), held_loss
            best.meta["best_epoch"] = epoch + 1
    return best, history
