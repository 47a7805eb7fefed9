"""Differentiable training losses for the two stages.

All losses take probability predictions in (0,1) and binary (or soft) targets
of identical shape and return scalar tensors. The soma stage trains on
0.5*focal + 0.5*dice; the branch stage on 0.2*focal + 0.6*dice + 0.2*clDice,
where clDice is a dice overlap between soft skeletons so thin tubes count by
their centerline, not their (tiny) volume.
"""

from __future__ import annotations

from . import tensor as T
from .tensor import Tensor

_LOG_EPS = 1e-7
_DICE_EPS = 1e-6


def _check_shapes(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")


def focal_loss(pred: Tensor, target: Tensor, alpha: float = 0.25,
               gamma: float = 3.0) -> Tensor:
    """Mean of -alpha * (1 - p_t)^gamma * log(p_t) with p_t the probability
    assigned to the true class; the exponent suppresses easy voxels."""
    _check_shapes(pred, target)
    pt = pred * target + (1.0 - pred) * (1.0 - target)
    pt = T.clamp(pt, _LOG_EPS, 1.0)
    weight = T.power(1.0 - pt, gamma) if gamma != 0 else 1.0
    return T.tmean(-alpha * weight * T.log(pt))


def dice_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_shapes(pred, target)
    inter = T.tsum(pred * target)
    denom = T.tsum(pred) + T.tsum(target)
    return 1.0 - (2.0 * inter + _DICE_EPS) / (denom + _DICE_EPS)


def soft_skeleton(mask: Tensor, iterations: int = 3) -> Tensor:
    """Differentiable skeleton via iterated soft erosion and opening residuals.

    At each scale the residual mask - open(mask) highlights structures thinner
    than the current erosion depth; residuals are fused with a soft OR
    (a + b - ab) and finally clamped below the input so the skeleton never
    exceeds the mask pointwise. Expects a channel-first volume (C, D, H, W)
    with values in [0, 1].
    """
    if iterations < 1:
        raise ValueError(f"iterations {iterations} must be >= 1")
    eroded = mask
    skel = T.relu(eroded - T.maxpool3(T.minpool3(eroded)))
    for _ in range(iterations):
        eroded = T.minpool3(eroded)
        delta = T.relu(eroded - T.maxpool3(T.minpool3(eroded)))
        skel = skel + T.relu(delta - skel * delta)
    return skel - T.relu(skel - mask)


def cldice_loss(pred: Tensor, target: Tensor, iterations: int = 3) -> Tensor:
    """Dice overlap between the soft skeletons of prediction and target."""
    _check_shapes(pred, target)
    s = soft_skeleton(pred, iterations)
    t = soft_skeleton(target, iterations)
    inter = T.tsum(s * t)
    denom = T.tsum(s) + T.tsum(t)
    return 1.0 - (2.0 * inter + _DICE_EPS) / (denom + _DICE_EPS)


def soma_loss(pred: Tensor, target: Tensor) -> Tensor:
    return 0.5 * focal_loss(pred, target) + 0.5 * dice_loss(pred, target)


def branch_loss(pred: Tensor, target: Tensor, skeleton_iterations: int = 3) -> Tensor:
    return (0.2 * focal_loss(pred, target)
            + 0.6 * dice_loss(pred, target)
            + 0.2 * cldice_loss(pred, target, skeleton_iterations))
