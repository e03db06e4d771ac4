"""Instance-balanced loss and online hard negative mining.

These are plain numpy kernels meant to be called from a training loop; they
do not compute gradients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .field_gen import DirectionField


@dataclass(frozen=True)
class HardNegativeSelection:
    """Pixels that take part in the loss.

    ``kept`` marks the retained non-text pixels, ``text`` marks the text
    pixels (always included).
    """

    kept: np.ndarray
    text: np.ndarray
    gamma: float

    @property
    def pixels(self) -> np.ndarray:
        return self.kept | self.text


def compute_weights(labels: np.ndarray) -> np.ndarray:
    """Per-pixel weights giving every instance the same total mass.

    A text pixel of instance ``T`` gets ``sum(|T'|) / (N * |T|)`` where ``N``
    is the number of non-empty instances; background pixels get 1.
    """
    labels = np.asarray(labels)
    counts = np.bincount(labels.ravel().astype(np.int64))
    counts[0] = 0
    n = np.count_nonzero(counts)
    w = np.ones(labels.shape, dtype=np.float64)
    if n == 0:
        return w
    total = counts.sum()
    text = labels != 0
    w[text] = total / (n * counts[labels[text]].astype(np.float64))
    return w


def per_pixel_loss(gt: DirectionField, pred: DirectionField) -> np.ndarray:
    """``||V_gt(p) - V_pred(p)||_2`` per pixel (unsquared)."""
    if gt.shape != pred.shape:
        raise ValueError(f"field shapes differ: {gt.shape} vs {pred.shape}")
    dx = gt.vx.astype(np.float64) - pred.vx
    dy = gt.vy.astype(np.float64) - pred.vy
    return np.hypot(dx, dy)


def select_hard_negatives(labels: np.ndarray, loss_map: np.ndarray, gamma: float) -> HardNegativeSelection:
    """Keep the ``floor(gamma * #text)`` highest-loss non-text pixels.

    Ties at the cut go to the earlier pixel in row-major order.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    labels = np.asarray(labels)
    loss_map = np.asarray(loss_map, dtype=np.float64)
    if labels.shape != loss_map.shape:
        raise ValueError(f"shape mismatch: {labels.shape} vs {loss_map.shape}")
    text = labels != 0
    budget = math.floor(gamma * int(text.sum()))
    neg = np.flatnonzero(~text.ravel())
    budget = min(budget, neg.size)
    kept = np.zeros(labels.size, dtype=bool)
    if budget > 0:
        order = np.argsort(-loss_map.ravel()[neg], kind="stable")
        kept[neg[order[:budget]]] = True
    return HardNegativeSelection(kept.reshape(labels.shape), text, float(gamma))


def total_loss(gt: DirectionField, pred: DirectionField, weights: np.ndarray,
               selection: HardNegativeSelection | None = None) -> float:
    """Weighted sum of per-pixel losses.

    With ``selection=None`` every pixel of the domain contributes; otherwise
    only text pixels and the kept hard negatives do.  No normalisation.
    """
    ell = per_pixel_loss(gt, pred)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != ell.shape:
        raise ValueError(f"weight shape {weights.shape} does not match field {ell.shape}")
    terms = weights * ell
    if selection is not None:
        if selection.kept.shape != ell.shape:
            raise ValueError("selection does not match field shape")
        terms = terms[selection.pixels]
    return float(np.sum(terms))
