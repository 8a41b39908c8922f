"""Segmentation losses built from differentiable tensor ops.

Both losses take probabilities (already through a sigmoid) and a binary
target of the same (n, 1, h, w) shape, and return a scalar (1, 1, 1, 1)
tensor that averages over the batch.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, ew_add, ew_mul, log, clamp, pow_scalar, \
    sum_spatial, sum_all

# probability floor/ceiling inside the log; keeps the loss finite when a
# sigmoid output was produced elsewhere without the library's own clipping
PROB_EPS = 1e-7

# per-image class weight is clamped so a frame that is almost all lesion
# (or almost none) still trains both classes
ALPHA_LO = 0.05
ALPHA_HI = 0.95


def _check_pair(prob: Tensor, target: np.ndarray) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 4 or target.shape[1] != 1:
        raise ShapeError(
            f"target must be (n, 1, h, w), got {target.shape}")
    if prob.data.shape != target.shape:
        raise ShapeError(
            f"probability shape {prob.data.shape} does not match target "
            f"shape {target.shape}")
    return target


def balance_weights(target: np.ndarray) -> np.ndarray:
    """Per-pixel weights from the per-image negative fraction.

    For image i with negative-pixel fraction a_i (clamped to
    [ALPHA_LO, ALPHA_HI]), lesion pixels weigh a_i and background pixels
    weigh 1 - a_i: the rarer class gets the larger weight.
    """
    n = target.shape[0]
    per_image = np.empty(n)
    for i in range(n):
        per_image[i] = 1.0 - target[i].mean()
    alpha = np.clip(per_image, ALPHA_LO, ALPHA_HI).reshape(n, 1, 1, 1)
    return np.where(target > 0.5, alpha, 1.0 - alpha)


def _one_minus(t: Tensor) -> Tensor:
    return (t * -1.0) + 1.0


def weighted_bce(prob: Tensor, target) -> Tensor:
    """Class-balanced binary cross-entropy, averaged per image then batch."""
    target = _check_pair(prob, target)
    w = Tensor._const(balance_weights(target))
    y = Tensor._const(target)
    y_inv = Tensor._const(1.0 - target)

    p = clamp(prob, PROB_EPS, 1.0 - PROB_EPS)
    p_inv = _one_minus(p)
    ll = ew_add(ew_mul(y, log(p)), ew_mul(y_inv, log(p_inv)))
    total = sum_all(ew_mul(w, ll))
    scale = -1.0 / float(target.size)
    return total * scale


def dice_loss(prob: Tensor, target, eps: float = 1.0) -> Tensor:
    """Soft dice: 1 - (2*overlap + eps) / (sum(y^2) + sum(p^2) + eps).

    Computed per image, then averaged. The eps term makes an empty target
    with an empty prediction score a perfect 0 instead of 0/0. Targets are
    binary, so sum(y^2) reduces to sum(y); the prediction is soft and its
    square matters.
    """
    target = _check_pair(prob, target)
    y = Tensor._const(target)
    inter = sum_spatial(ew_mul(prob, y))
    psq = sum_spatial(pow_scalar(prob, 2.0))
    ysum = sum_spatial(y)
    num = (inter * 2.0) + eps
    den = ew_add(psq, ysum) + eps
    ratio = ew_mul(num, pow_scalar(den, -1.0))
    per_image = _one_minus(ratio)
    return sum_all(per_image) * (1.0 / target.shape[0])


def joint_loss(main_prob: Tensor, target, aux_prob: Tensor = None,
               dice_weight: float = 1.0, dice_eps: float = 1.0):
    """Sum of (bce + dice_weight * dice) over the active branches.

    Returns (loss, parts) where parts holds plain floats for logging:
    wbce_main, dice_main, wbce_aux, dice_aux, total. Aux entries are 0.0
    when no aux branch is given.
    """
    wb_m = weighted_bce(main_prob, target)
    dc_m = dice_loss(main_prob, target, eps=dice_eps)
    loss = ew_add(wb_m, dc_m * dice_weight)
    parts = {
        "wbce_main": float(wb_m.data.reshape(())),
        "dice_main": float(dc_m.data.reshape(())),
        "wbce_aux": 0.0,
        "dice_aux": 0.0,
    }
    if aux_prob is not None:
        wb_a = weighted_bce(aux_prob, target)
        dc_a = dice_loss(aux_prob, target, eps=dice_eps)
        loss = ew_add(loss, ew_add(wb_a, dc_a * dice_weight))
        parts["wbce_aux"] = float(wb_a.data.reshape(()))
        parts["dice_aux"] = float(dc_a.data.reshape(()))
    parts["total"] = float(loss.data.reshape(()))
    return loss, parts
