"""Loss functions. Each ``*_loss`` returns a float; the matching ``*_grad`` returns dL/dpred."""
from __future__ import annotations

import numpy as np

CE_FLOOR = 1e-7
DICE_SMOOTH = 1.0


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse_loss(pred, target) -> float:
    pred, target = _same_shape(pred, target)
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred, target) -> np.ndarray:
    pred, target = _same_shape(pred, target)
    return 2.0 * (pred - target) / pred.size


def _check_prob(prob, label, class_weights):
    prob, label = _same_shape(prob, label)
    if prob.ndim < 2:
        raise ValueError("prob must have a class axis at position 1")
    if not np.allclose(prob.sum(axis=1), 1.0, atol=1e-6, rtol=0):
        raise ValueError("prob is not normalised over the class axis")
    w = np.asarray(class_weights, dtype=np.float64)
    if w.shape != (prob.shape[1],):
        raise ValueError(f"need {prob.shape[1]} class weights, got {w.shape}")
    return prob, label, w


def _bc(w, ndim):
    return w.reshape((1, -1) + (1,) * (ndim - 2))


def weighted_ce_dice_loss(prob, label, class_weights) -> float:
    """Weighted pixel-wise cross entropy plus soft dice loss over foreground classes.

    ``prob`` and one-hot ``label`` have shape (N, C, ...); class 0 is background.
    CE is averaged over pixels; dice is computed over the whole batch.
    """
    prob, label, w = _check_prob(prob, label, class_weights)
    npix = prob.size // prob.shape[1]
    logp = np.log(np.maximum(prob, CE_FLOOR))
    ce = -float(np.sum(_bc(w, prob.ndim) * label * logp)) / npix
    axes = (0,) + tuple(range(2, prob.ndim))
    inter = (prob * label).sum(axis=axes)
    denom = prob.sum(axis=axes) + label.sum(axis=axes)
    dice = (2 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)
    return ce + float(np.sum(1.0 - dice[1:]))


def weighted_ce_dice_grad(prob, label, class_weights) -> np.ndarray:
    prob, label, w = _check_prob(prob, label, class_weights)
    npix = prob.size // prob.shape[1]
    g = np.where(prob > CE_FLOOR, -_bc(w, prob.ndim) * label / np.maximum(prob, CE_FLOOR), 0.0) / npix
    axes = (0,) + tuple(range(2, prob.ndim))
    inter = (prob * label).sum(axis=axes)
    denom = prob.sum(axis=axes) + label.sum(axis=axes) + DICE_SMOOTH
    num = 2 * inter + DICE_SMOOTH
    # d(1 - num/denom)/dp = -(2 y denom - num) / denom^2
    ddice = -(2 * label * _bc(denom, prob.ndim) - _bc(num, prob.ndim)) / _bc(denom ** 2, prob.ndim)
    ddice[:, 0] = 0.0
    return g + ddice


def inverse_frequency_weights(label) -> np.ndarray:
    """Per-class weights ``npix / (C * count_c)``; absent classes get weight 1."""
    label = np.asarray(label)
    axes = (0,) + tuple(range(2, label.ndim))
    counts = label.sum(axis=axes).astype(np.float64)
    npix = label.size / label.shape[1]
    c = label.shape[1]
    return np.where(counts > 0, npix / (c * np.maximum(counts, 1.0)), 1.0)
