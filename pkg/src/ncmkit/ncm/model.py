"""Residual FFN confidence classifier with fusion-weight and temperature heads.

The forward pass starts from a :class:`Batch` of raw per-record inputs, so
the heads can recompute the weighted n-best scores and the entropy and
probability features they affect. Gradients are propagated by hand through
the whole chain.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ncmkit.errors import InvalidConfigError, InvalidInputError, ModelSpecMismatchError, NumericFailureError
from ncmkit.features import FeatureSpec, assemble_features, nbest_components, step_embeddings, step_logits
from ncmkit.ncm.loss import clamp_logits, focal_loss_from_logits

TAU_EPS = 1e-3
HEAD_MODES = ("off", "fixed", "ada")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y: float) -> float:
    return float(np.log(np.expm1(y)))


def logit(p: float) -> float:
    return float(np.log(p) - np.log1p(-p))


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


# -- inputs ----------------------------------------------------------------


@dataclass
class Batch:
    """Raw inputs for a set of records.

    ``static`` holds every family at the spec's static weights and unit
    temperature; the heads overwrite the families they control. Step arrays
    are padded to the longest hypothesis and ``mask`` marks real steps.
    """

    static: np.ndarray  # (B, dim)
    labels: np.ndarray | None = None  # (B,)
    comps: np.ndarray | None = None  # (B, n, 4)
    logits: np.ndarray | None = None  # (B, U, K)
    mask: np.ndarray | None = None  # (B, U)
    dec: np.ndarray | None = None  # (B, U, D)

    def __len__(self) -> int:
        return self.static.shape[0]

    def take(self, idx) -> "Batch":
        def pick(a):
            return None if a is None else a[idx]
        return Batch(self.static[idx], pick(self.labels), pick(self.comps), pick(self.logits),
                     pick(self.mask), pick(self.dec))

    @classmethod
    def from_records(cls, records: Sequence, spec: FeatureSpec, labels=None) -> "Batch":
        """Builds a batch from DecodeRecords or LabeledRecords.

        Labels default to those stored on LabeledRecords, if present.
        """
        recs = [getattr(r, "record", r) for r in records]
        if labels is None and records and all(hasattr(r, "label") for r in records):
            labels = [r.label for r in records]
        static = np.vstack([assemble_features(r, spec).values for r in recs]) if recs \
            else np.zeros((0, spec.dim))
        comps = logits = mask = dec = None
        if "nbest" in spec.families:
            comps = np.stack([nbest_components(r, spec.n) for r in recs]) if recs \
                else np.zeros((0, spec.n, 4))
        if "ent" in spec.families or "prob" in spec.families:
            steps = [step_logits(r, spec.K) for r in recs]
            embs = [step_embeddings(r) for r in recs]
            u_max = max((len(s) for s in steps), default=1)
            logits = np.zeros((len(recs), u_max, spec.K))
            mask = np.zeros((len(recs), u_max))
            dec = np.zeros((len(recs), u_max, spec.embed_dim))
            for i, (s, e) in enumerate(zip(steps, embs)):
                if e.shape != (len(s), spec.embed_dim):
                    raise ModelSpecMismatchError(
                        f"{recs[i].utt_id}: decoder embedding shape {e.shape} does not match "
                        f"{len(s)} steps x embed_dim {spec.embed_dim}")
                logits[i, :len(s)] = s
                mask[i, :len(s)] = 1.0
                dec[i, :len(s)] = e
        lab = None if labels is None else np.asarray(labels, dtype=np.int64)
        return cls(static=static, labels=lab, comps=comps, logits=logits, mask=mask, dec=dec)


# -- components ------------------------------------------------------------


@dataclass
class ResidualFFN:
    """Three ReLU layers of equal width with identity skips into layers 2 and 3."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator) -> "ResidualFFN":
        if input_dim < 1 or hidden < 1:
            raise InvalidConfigError("input_dim and hidden must be positive")
        return cls(
            W1=glorot(rng, hidden, input_dim), b1=np.zeros(hidden),
            W2=glorot(rng, hidden, hidden), b2=np.zeros(hidden),
            W3=glorot(rng, hidden, hidden), b3=np.zeros(hidden),
            w_out=glorot(rng, 1, hidden)[0], b_out=np.zeros(1),
        )

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ("W1", "b1", "W2", "b2", "W3", "b3", "w_out", "b_out")}

    def forward(self, x: np.ndarray):
        a1 = x @ self.W1.T + self.b1
        h1 = np.maximum(a1, 0.0)
        a2 = h1 @ self.W2.T + self.b2
        h2 = h1 + np.maximum(a2, 0.0)
        a3 = h2 @ self.W3.T + self.b3
        h3 = h2 + np.maximum(a3, 0.0)
        z = h3 @ self.w_out + self.b_out[0]
        return z, (x, a1, h1, a2, h2, a3, h3)

    def backward(self, cache, dz: np.ndarray):
        x, a1, h1, a2, h2, a3, h3 = cache
        g = {"w_out": h3.T @ dz, "b_out": np.array([dz.sum()])}
        dh3 = dz[:, None] * self.w_out
        da3 = dh3 * (a3 > 0)
        g["W3"], g["b3"] = da3.T @ h2, da3.sum(0)
        dh2 = dh3 + da3 @ self.W3
        da2 = dh2 * (a2 > 0)
        g["W2"], g["b2"] = da2.T @ h1, da2.sum(0)
        dh1 = dh2 + da2 @ self.W2
        da1 = dh1 * (a1 > 0)
        g["W1"], g["b1"] = da1.T @ x, da1.sum(0)
        return g, da1 @ self.W1


@dataclass
class FusionHead:
    """Learns the (ctc, att, ngram, rnnlm) weights used for n-best scores.

    ``fixed`` learns two reals (theta_a, theta_l) with weights
    (sig(theta_a), 1 - sig(theta_a), sig(theta_l), 1 - sig(theta_l)).
    ``ada`` maps each hypothesis's normalized component scores through a
    tanh layer to four logits and softmaxes them in pairs. Inputs to the
    ``ada`` layer are standardized with frozen statistics.
    """

    mode: str = "off"
    theta: np.ndarray = field(default_factory=lambda: np.zeros(2))
    A: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    a: np.ndarray = field(default_factory=lambda: np.zeros(0))
    B: np.ndarray = field(default_factory=lambda: np.zeros((4, 0)))
    b: np.ndarray = field(default_factory=lambda: np.zeros(4))
    in_mean: np.ndarray = field(default_factory=lambda: np.zeros(4))
    in_scale: np.ndarray = field(default_factory=lambda: np.ones(4))

    def __post_init__(self):
        if self.mode not in HEAD_MODES:
            raise InvalidConfigError(f"fusion mode must be one of {HEAD_MODES}, got {self.mode!r}")

    @classmethod
    def init(cls, mode: str, rng: np.random.Generator, hidden: int = 8,
             weights: Sequence[float] = (0.5, 0.5, 0.8, 0.2)) -> "FusionHead":
        """Starts at the given static weights in either learnable mode."""
        head = cls(mode=mode)
        ta, tl = (logit(float(np.clip(w, 1e-6, 1 - 1e-6))) for w in (weights[0], weights[2]))
        if mode == "fixed":
            head.theta = np.array([ta, tl])
        elif mode == "ada":
            head.A = glorot(rng, hidden, 4)
            head.a = np.zeros(hidden)
            head.B = np.zeros((4, hidden))
            head.b = np.array([ta, 0.0, tl, 0.0])
        return head

    def params(self) -> dict[str, np.ndarray]:
        if self.mode == "fixed":
            return {"theta": self.theta}
        if self.mode == "ada":
            return {"A": self.A, "a": self.a, "B": self.B, "b": self.b}
        return {}

    def forward(self, comps: np.ndarray):
        """Weights for every hypothesis: (..., 4) -> (..., 4)."""
        if self.mode == "fixed":
            s = sigmoid(self.theta)
            lam = np.array([s[0], 1.0 - s[0], s[1], 1.0 - s[1]])
            return np.broadcast_to(lam, comps.shape).copy(), None
        if self.mode == "ada":
            u = (comps - self.in_mean) / self.in_scale
            hid = np.tanh(u @ self.A.T + self.a)
            lg = hid @ self.B.T + self.b
            lam = np.empty_like(lg)
            lam[..., 0] = sigmoid(lg[..., 0] - lg[..., 1])
            lam[..., 1] = 1.0 - lam[..., 0]
            lam[..., 2] = sigmoid(lg[..., 2] - lg[..., 3])
            lam[..., 3] = 1.0 - lam[..., 2]
            return lam, (u, hid)
        raise InvalidInputError("fusion head is off")

    def backward(self, lam: np.ndarray, cache, dlam: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given d loss / d lambda of shape (..., 4)."""
        # d lam1 / d (l1 - l2) = lam1 lam2, lam2 = 1 - lam1
        d12 = lam[..., 0] * lam[..., 1] * (dlam[..., 0] - dlam[..., 1])
        d34 = lam[..., 2] * lam[..., 3] * (dlam[..., 2] - dlam[..., 3])
        if self.mode == "fixed":
            return {"theta": np.array([d12.sum(), d34.sum()])}
        u, hid = cache
        dlg = np.stack([d12, -d12, d34, -d34], axis=-1).reshape(-1, 4)
        hid2 = hid.reshape(-1, hid.shape[-1])
        dpre = (dlg @ self.B) * (1.0 - hid2**2)
        return {
            "A": dpre.T @ u.reshape(-1, 4),
            "a": dpre.sum(0),
            "B": dlg.T @ hid2,
            "b": dlg.sum(0),
        }


def fused_lambda(head: FusionHead, component_scores) -> tuple[float, float, float, float]:
    """(lambda1..lambda4) the head assigns to one hypothesis."""
    if head.mode == "off":
        raise InvalidInputError("fused_lambda called on a fusion head that is off")
    s = np.asarray(component_scores, dtype=np.float64)
    if s.shape != (4,):
        raise InvalidInputError(f"expected 4 component scores, got shape {s.shape}")
    lam, _ = head.forward(s[None])
    return tuple(float(v) for v in lam[0])


@dataclass
class TempHead:
    """Per-step softmax temperature for the top-K features.

    ``fixed`` learns one temperature softplus(theta) + eps; ``ada`` computes
    softplus(v . tanh(W d_t + c) + v0) + eps from the decoder embedding d_t.
    """

    mode: str = "off"
    theta: np.ndarray = field(default_factory=lambda: np.zeros(1))
    W: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v0: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        if self.mode not in HEAD_MODES:
            raise InvalidConfigError(f"temperature mode must be one of {HEAD_MODES}, got {self.mode!r}")

    @classmethod
    def init(cls, mode: str, rng: np.random.Generator, embed_dim: int, hidden: int = 8) -> "TempHead":
        """Starts at temperature 1 in either learnable mode."""
        head = cls(mode=mode)
        start = softplus_inv(1.0 - TAU_EPS)
        if mode == "fixed":
            head.theta = np.array([start])
        elif mode == "ada":
            head.W = glorot(rng, hidden, embed_dim)
            head.c = np.zeros(hidden)
            head.v = np.zeros(hidden)
            head.v0 = np.array([start])
        return head

    @property
    def embed_dim(self) -> int:
        return self.W.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        if self.mode == "fixed":
            return {"theta": self.theta}
        if self.mode == "ada":
            return {"W": self.W, "c": self.c, "v": self.v, "v0": self.v0}
        return {}

    def forward(self, dec: np.ndarray):
        """Temperatures for decoder states ``dec`` of shape (..., D) -> (...)."""
        if self.mode == "off":
            return np.ones(dec.shape[:-1]), None
        if self.mode == "fixed":
            pre = np.full(dec.shape[:-1], self.theta[0])
            return softplus(pre) + TAU_EPS, (pre, None)
        if dec.shape[-1] != self.embed_dim:
            raise ModelSpecMismatchError(
                f"temperature head expects {self.embed_dim}-dim input, got {dec.shape[-1]}")
        hid = np.tanh(dec @ self.W.T + self.c)
        pre = hid @ self.v + self.v0[0]
        return softplus(pre) + TAU_EPS, (pre, hid)

    def backward(self, dec: np.ndarray, cache, dtau: np.ndarray) -> dict[str, np.ndarray]:
        pre, hid = cache
        dpre = dtau * sigmoid(pre)
        if self.mode == "fixed":
            return {"theta": np.array([dpre.sum()])}
        d = dec.reshape(-1, dec.shape[-1])
        h = hid.reshape(-1, hid.shape[-1])
        dp = dpre.reshape(-1)
        dh = np.outer(dp, self.v) * (1.0 - h**2)
        return {"W": dh.T @ d, "c": dh.sum(0), "v": h.T @ dp, "v0": np.array([dp.sum()])}


def adaptive_temperature(head: TempHead, decfeat_t) -> float:
    """Temperature the head assigns to one decoder step."""
    d = np.asarray(decfeat_t, dtype=np.float64)
    if head.mode == "ada" and d.shape != (head.embed_dim,):
        raise ModelSpecMismatchError(
            f"temperature head expects a {head.embed_dim}-vector, got shape {d.shape}")
    tau, _ = head.forward(d[None])
    return float(tau[0])


# -- full model ------------------------------------------------------------


@dataclass
class NCMModel:
    spec: FeatureSpec
    ffn: ResidualFFN
    fusion: FusionHead
    temp: TempHead
    norm_mean: np.ndarray
    norm_scale: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.ffn.input_dim != self.spec.dim:
            raise ModelSpecMismatchError(
                f"network takes {self.ffn.input_dim} inputs but the feature spec yields {self.spec.dim}")
        if self.norm_mean.shape != (self.spec.dim,) or self.norm_scale.shape != (self.spec.dim,):
            raise ModelSpecMismatchError("normalizer size does not match the feature spec")
        if self.fusion.mode != "off" and not ("nbest" in self.spec.families
                                              and self.spec.nbest_mode == "weighted"):
            raise InvalidConfigError("a fusion head needs the weighted nbest family")
        if self.temp.mode != "off" and not ("ent" in self.spec.families or "prob" in self.spec.families):
            raise InvalidConfigError("a temperature head needs the ent or prob family")

    def params(self) -> dict[str, np.ndarray]:
        """All trainable arrays by qualified name; the arrays are live references."""
        out = {f"ffn.{k}": v for k, v in self.ffn.params().items()}
        out.update({f"fusion.{k}": v for k, v in self.fusion.params().items()})
        out.update({f"temp.{k}": v for k, v in self.temp.params().items()})
        return out

    def copy(self) -> "NCMModel":
        return copy.deepcopy(self)


def init_model(spec: FeatureSpec, hidden: int = 128, fusion_mode: str = "off", temp_mode: str = "off",
               seed: int = 0, fusion_hidden: int = 8, temp_hidden: int = 8,
               norm_batch: Batch | None = None) -> NCMModel:
    """Seeded model whose input normalizer (and ada-fusion input scaling) come from ``norm_batch``."""
    rng = np.random.default_rng([seed, 4242])
    ffn = ResidualFFN.init(spec.dim, hidden, rng)
    fusion = FusionHead.init(fusion_mode, rng, fusion_hidden, spec.weights)
    temp = TempHead.init(temp_mode, rng, spec.embed_dim, temp_hidden)
    model = NCMModel(spec, ffn, fusion, temp, np.zeros(spec.dim), np.ones(spec.dim),
                     meta={"hidden": hidden})
    if norm_batch is not None and len(norm_batch):
        if fusion_mode == "ada":
            flat = norm_batch.comps.reshape(-1, 4)
            fusion.in_mean = flat.mean(0)
            fusion.in_scale = _safe_scale(flat.std(0))
        x = raw_features(model, norm_batch)[0]
        model.norm_mean = x.mean(0)
        model.norm_scale = _safe_scale(x.std(0))
    return model


def _safe_scale(std: np.ndarray) -> np.ndarray:
    return np.where(std > 1e-12, std, 1.0)


def _step_features(model: NCMModel, batch: Batch):
    """Temperatures and the quantities the ent/prob families need."""
    tau, tcache = model.temp.forward(batch.dec)
    q = batch.logits / tau[..., None]
    q_max = q.max(-1, keepdims=True)
    lse = q_max + np.log(np.exp(q - q_max).sum(-1, keepdims=True))
    logp = q - lse
    p = np.exp(logp)
    return tau, tcache, q, logp, p


def raw_features(model: NCMModel, batch: Batch):
    """Feature matrix under the model's heads, before normalization."""
    spec = model.spec
    x = batch.static.copy()
    sl = spec.slices()
    cache: dict = {}
    if model.fusion.mode != "off":
        lam, fcache = model.fusion.forward(batch.comps)
        x[:, sl["nbest"]] = (lam * batch.comps).sum(-1)
        cache["fusion"] = (lam, fcache)
    if model.temp.mode != "off":
        tau, tcache, q, logp, p = _step_features(model, batch)
        mask = batch.mask
        n_steps = mask.sum(1)
        cache["temp"] = (tau, tcache, q, logp, p)
        if "ent" in sl:
            h = -(p * logp).sum(-1)
            x[:, sl["ent"]] = ((h * mask).sum(1) / n_steps)[:, None]
            cache["ent"] = h
        if "prob" in sl:
            pm = p * mask[..., None]
            mean = pm.sum(1) / n_steps[:, None]
            if spec.prob_mode == "avg_vec":
                x[:, sl["prob"]] = mean
            else:
                dev = (p - mean[:, None, :]) * mask[..., None]
                std = np.sqrt((dev**2).sum(1) / n_steps[:, None])
                m = mask[..., None] > 0
                i_min = np.where(m, p, np.inf).argmin(1)
                i_max = np.where(m, p, -np.inf).argmax(1)
                pmin = np.take_along_axis(p, i_min[:, None, :], 1)[:, 0]
                pmax = np.take_along_axis(p, i_max[:, None, :], 1)[:, 0]
                x[:, sl["prob"]] = np.concatenate([mean, std, pmin, pmax], axis=1)
                cache["prob"] = (dev, std, i_min, i_max)
    return x, cache


def forward(model: NCMModel, batch: Batch):
    """Clamped-free logits of the FFN and everything backward needs."""
    if batch.static.shape[1] != model.spec.dim:
        raise ModelSpecMismatchError(
            f"batch has {batch.static.shape[1]} features, model expects {model.spec.dim}")
    x, cache = raw_features(model, batch)
    xn = (x - model.norm_mean) / model.norm_scale
    z, ffn_cache = model.ffn.forward(xn)
    cache["ffn"] = ffn_cache
    return z, cache


def predict(model: NCMModel, records_or_batch) -> np.ndarray:
    batch = records_or_batch if isinstance(records_or_batch, Batch) \
        else Batch.from_records(records_or_batch, model.spec)
    if len(batch) == 0:
        return np.zeros(0)
    z, _ = forward(model, batch)
    return sigmoid(clamp_logits(z))


def ncm_forward(model: NCMModel, record) -> float:
    """Confidence in (0, 1) for one record."""
    return float(predict(model, [record])[0])


def backward(model: NCMModel, batch: Batch, cache: dict, dz: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of sum(dz * z) w.r.t. every trainable array."""
    spec = model.spec
    sl = spec.slices()
    g_ffn, dxn = model.ffn.backward(cache["ffn"], dz)
    grads = {f"ffn.{k}": v for k, v in g_ffn.items()}
    dx = dxn / model.norm_scale

    if "fusion" in cache:
        lam, fcache = cache["fusion"]
        dlam = dx[:, sl["nbest"], None] * batch.comps
        for k, v in model.fusion.backward(lam, fcache, dlam).items():
            grads[f"fusion.{k}"] = v

    if "temp" in cache:
        tau, tcache, q, logp, p = cache["temp"]
        mask = batch.mask
        n_steps = mask.sum(1)
        dq = np.zeros_like(q)
        if "ent" in sl:
            h = cache["ent"]
            dh = dx[:, sl["ent"]][:, 0:1] * mask / n_steps[:, None]
            # dH/dq_i = -p_i (log p_i + H)
            dq += dh[..., None] * (-p * (logp + h[..., None]))
        if "prob" in sl:
            block = dx[:, sl["prob"]]
            k = spec.K
            dp = (block[:, None, :k] * mask[..., None]) / n_steps[:, None, None]
            if spec.prob_mode == "seq_stats":
                dev, std, i_min, i_max = cache["prob"]
                safe = np.where(std > 0, std, 1.0)
                coef = np.where(std > 0, block[:, k:2 * k] / (n_steps[:, None] * safe), 0.0)
                dp = dp + coef[:, None, :] * dev
                b_idx = np.arange(len(batch))[:, None]
                r_idx = np.arange(k)[None, :]
                np.add.at(dp, (b_idx, i_min, r_idx), block[:, 2 * k:3 * k])
                np.add.at(dp, (b_idx, i_max, r_idx), block[:, 3 * k:])
            # softmax backward: dq_i = p_i (dp_i - sum_j p_j dp_j)
            dq += p * (dp - (p * dp).sum(-1, keepdims=True))
        # q = l / tau  =>  dq/dtau = -q / tau
        dtau = -(dq * q).sum(-1) / tau * mask
        for k_, v in model.temp.backward(batch.dec, tcache, dtau).items():
            grads[f"temp.{k_}"] = v

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericFailureError(f"non-finite gradient in parameter block {name}")
    return grads


def compute_gradients(model: NCMModel, batch: Batch, alpha_pos: float = 0.5,
                      gamma: float = 2.0) -> tuple[float, dict[str, np.ndarray]]:
    """Mean focal loss over the batch and its gradient for every parameter."""
    if len(batch) == 0:
        raise InvalidInputError("gradient batch is empty")
    if batch.labels is None:
        raise InvalidInputError("gradient batch has no labels")
    z, cache = forward(model, batch)
    loss, dz = focal_loss_from_logits(z, batch.labels, alpha_pos, gamma)
    n = len(batch)
    if not np.all(np.isfinite(loss)):
        raise NumericFailureError("non-finite loss")
    return float(loss.mean()), backward(model, batch, cache, dz / n)


def batch_loss(model: NCMModel, batch: Batch, alpha_pos: float, gamma: float) -> float:
    z, _ = forward(model, batch)
    loss, _ = focal_loss_from_logits(z, batch.labels, alpha_pos, gamma)
    return float(loss.mean())
