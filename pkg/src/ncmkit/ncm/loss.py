"""Class-weighted focal loss on sigmoid outputs."""

from __future__ import annotations

import numpy as np

from ncmkit.errors import InvalidInputError

LOGIT_CLAMP = 30.0


def _check_alpha_gamma(alpha_pos: float, gamma: float):
    if not 0.0 < alpha_pos <= 1.0:
        raise InvalidInputError(f"alpha_pos must lie in (0, 1], got {alpha_pos}")
    if gamma < 0:
        raise InvalidInputError(f"gamma must be non-negative, got {gamma}")


def weighted_focal_loss(p, y, alpha_pos: float = 0.5, gamma: float = 2.0):
    """Elementwise ``-alpha_t (1 - p_t)^gamma log p_t``.

    Args:
        p: Predicted probability of the positive class, strictly inside (0, 1).
        y: Labels in {0, 1}.
        alpha_pos: Weight of positive examples; negatives get ``1 - alpha_pos``.
        gamma: Focusing exponent; 0 gives weighted cross-entropy.

    Returns:
        Loss with the broadcast shape of ``p`` and ``y`` (a float for scalars).
    """
    _check_alpha_gamma(alpha_pos, gamma)
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    if np.any(~((p > 0) & (p < 1))):
        raise InvalidInputError("p must lie strictly inside (0, 1); clamp logits upstream")
    if not np.all(np.isin(y, (0, 1))):
        raise InvalidInputError("labels must be 0 or 1")
    pos = y == 1
    p_t = np.where(pos, p, 1.0 - p)
    a_t = np.where(pos, alpha_pos, 1.0 - alpha_pos)
    loss = -a_t * (1.0 - p_t) ** gamma * np.log(p_t)
    return float(loss) if loss.ndim == 0 else loss


def clamp_logits(z):
    return np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)


def focal_loss_from_logits(z, y, alpha_pos: float, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample focal loss of clamped logits and its derivative w.r.t. ``z``.

    The derivative is zero where the clamp is active.
    """
    _check_alpha_gamma(alpha_pos, gamma)
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y)
    zc = clamp_logits(z)
    sign = np.where(y == 1, 1.0, -1.0)
    # log p_t = log sigmoid(sign * z), stable for either sign
    s = sign * zc
    log_pt = -np.logaddexp(0.0, -s)
    p_t = np.exp(log_pt)
    q_t = -np.expm1(log_pt)  # 1 - p_t without cancellation
    a_t = np.where(y == 1, alpha_pos, 1.0 - alpha_pos)
    loss = -a_t * q_t**gamma * log_pt
    # d loss / d s = a_t [gamma p_t q_t^gamma log p_t - q_t^(gamma+1)]
    dlds = a_t * (gamma * p_t * q_t**gamma * log_pt - q_t ** (gamma + 1.0))
    grad = np.where(np.abs(z) <= LOGIT_CLAMP, sign * dlds, 0.0)
    return loss, grad
