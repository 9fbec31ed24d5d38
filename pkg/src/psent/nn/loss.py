from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import log_softmax

LOG_EPS = 1e-12


@dataclass(frozen=True)
class FocalLossParams:
    gamma: float = 2.0
    alpha: tuple = (0.5, 0.5)  # weight of class 0 (non-breach), class 1 (breach)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if len(self.alpha) != 2 or min(self.alpha) <= 0:
            raise ValueError("alpha must be a pair of positive weights")

    @classmethod
    def balanced(cls, labels, gamma: float = 2.0) -> "FocalLossParams":
        """Class weights inversely proportional to class frequency, summing to 1."""
        counts = np.bincount(np.asarray(labels, dtype=int), minlength=2).astype(float)
        inv = 1.0 / np.maximum(counts, 1.0)
        inv /= inv.sum()
        return cls(gamma, (float(inv[0]), float(inv[1])))


def focal_loss(logits, labels, params: FocalLossParams = FocalLossParams()):
    """Mean focal loss and its gradient with respect to the logits.

    loss_i = -alpha_y (1 - p_y)^gamma log p_y with p = softmax(logits).
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if np.any((y < 0) | (y > 1)):
        raise ValueError("labels must be 0 or 1")
    n = len(y)
    logp_all = log_softmax(z)
    p_all = np.exp(logp_all)
    rows = np.arange(n)
    logp = np.maximum(logp_all[rows, y], np.log(LOG_EPS))
    p = p_all[rows, y]
    alpha = np.asarray(params.alpha, dtype=np.float64)[y]
    g = params.gamma
    q = np.maximum(1.0 - p, 0.0)
    loss = np.mean(-alpha * q**g * logp)

    # dL/dp_y chained through dp_y/dz_k = p_y (delta_ky - p_k)
    if g == 0:
        term = -np.ones(n)
    else:
        q_safe = np.maximum(q, LOG_EPS)
        term = g * q_safe ** (g - 1) * p * logp - q**g
    onehot = np.zeros_like(z)
    onehot[rows, y] = 1.0
    grad = (alpha * term)[:, None] * (onehot - p_all) / n
    return float(loss), grad
