"""Joint focal + dice training loss with analytic logit gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import DTYPE, sigmoid

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    alpha: float = 0.2
    lambda_focal: float = 0.5
    lambda_dice: float = 1.0
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.lambda_focal < 0 or self.lambda_dice < 0:
            raise ValueError("loss coefficients must be >= 0")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


def _check_pair(prob, gt):
    prob = np.asarray(prob, dtype=DTYPE)
    gt = np.asarray(gt)
    if prob.shape != gt.shape:
        raise ValueError(f"prediction {prob.shape} and target {gt.shape} shapes differ")
    return prob, gt.astype(DTYPE)


def focal_loss(prob, gt, cfg: LossConfig) -> float:
    """Mean of -alpha_t (1 - p_t)^gamma log(p_t) over all pixels.

    ``alpha`` weighs the positive (changed) class; probabilities are
    clamped to [1e-7, 1 - 1e-7] before the logarithm.
    """
    prob, gt = _check_pair(prob, gt)
    pc = np.clip(prob, PROB_CLAMP, 1.0 - PROB_CLAMP)
    p_t = np.where(gt > 0, pc, 1.0 - pc)
    a_t = np.where(gt > 0, cfg.alpha, 1.0 - cfg.alpha)
    return float(np.mean(-a_t * (1.0 - p_t) ** cfg.gamma * np.log(p_t)))


def dice_loss(prob, gt, cfg: LossConfig) -> float:
    """Smoothed soft dice: 1 - (2 sum(p*g) + eps) / (sum p + sum g + eps)."""
    prob, gt = _check_pair(prob, gt)
    inter = float((prob * gt).sum())
    denom = float(prob.sum() + gt.sum())
    return 1.0 - (2.0 * inter + cfg.epsilon) / (denom + cfg.epsilon)


def total_loss(logits, gt, cfg: LossConfig) -> float:
    """lambda_focal * focal + lambda_dice * dice on sigmoid(logits)."""
    prob = sigmoid(np.asarray(logits, dtype=DTYPE))
    return (cfg.lambda_focal * focal_loss(prob, gt, cfg)
            + cfg.lambda_dice * dice_loss(prob, gt, cfg))


def total_loss_grad(logits, gt, cfg: LossConfig):
    """Returns (loss, d loss / d logits, parts) for one [H, W] sample."""
    logits = np.asarray(logits, dtype=DTYPE)
    prob, gt = _check_pair(sigmoid(logits), gt)
    n = prob.size

    pc = np.clip(prob, PROB_CLAMP, 1.0 - PROB_CLAMP)
    p_t = np.where(gt > 0, pc, 1.0 - pc)
    a_t = np.where(gt > 0, cfg.alpha, 1.0 - cfg.alpha)
    one_m = 1.0 - p_t
    focal = float(np.mean(-a_t * one_m ** cfg.gamma * np.log(p_t)))
    # clamping keeps one_m >= 1e-7, so the gamma-1 power stays finite
    dfocal_dpt = a_t * (cfg.gamma * one_m ** (cfg.gamma - 1.0) * np.log(p_t)
                        - one_m ** cfg.gamma / p_t) / n
    inside = (prob > PROB_CLAMP) & (prob < 1.0 - PROB_CLAMP)
    dfocal_dp = dfocal_dpt * np.where(gt > 0, 1.0, -1.0) * inside

    inter = float((prob * gt).sum())
    denom = float(prob.sum() + gt.sum()) + cfg.epsilon
    dice = 1.0 - (2.0 * inter + cfg.epsilon) / denom
    ddice_dp = -(2.0 * gt * denom - (2.0 * inter + cfg.epsilon)) / (denom * denom)

    dloss_dp = cfg.lambda_focal * dfocal_dp + cfg.lambda_dice * ddice_dp
    dlogits = dloss_dp * prob * (1.0 - prob)
    loss = cfg.lambda_focal * focal + cfg.lambda_dice * dice
    return loss, dlogits, {"focal": focal, "dice": dice}


def batch_total_loss_grad(logits, gt, cfg: LossConfig):
    """Mean of per-sample total losses over a batch [B, H, W]."""
    b = logits.shape[0]
    dlogits = np.empty_like(logits)
    loss = 0.0
    focal = dice = 0.0
    for i in range(b):
        li, di, parts = total_loss_grad(logits[i], gt[i], cfg)
        loss += li / b
        dlogits[i] = di / b
        focal += parts["focal"] / b
        dice += parts["dice"] / b
    return loss, dlogits, {"focal": focal, "dice": dice}
