"""Asymmetric multi-label loss with probability shifting and exact gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


def sigmoid(z):
    """Numerically stable logistic function (branches on the sign of z)."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def _log_sigmoid(z: float) -> float:
    # log sigma(z) = -log(1 + e^{-z}), stable on both tails
    return -np.logaddexp(0.0, -z)


@dataclass(frozen=True)
class AslConfig:
    """Focusing exponents and negative-probability margin.

    gamma_neg >= gamma_pos keeps the emphasis on positive samples; margin m
    shifts negative probabilities down before focusing (p_m = max(p - m, 0)).
    """

    gamma_pos: float = 0.0
    gamma_neg: float = 1.0
    margin: float = 0.0

    def __post_init__(self):
        if self.gamma_pos < 0 or self.gamma_neg < 0 or self.margin < 0:
            raise ValueError("gamma_pos, gamma_neg, margin must be >= 0")
        if self.gamma_neg < self.gamma_pos:
            raise ValueError("gamma_neg must be >= gamma_pos")


def asl(logits, labels, cfg: AslConfig = AslConfig()):
    """Asymmetric focusing loss over K independent binary labels.

    Per label with p = sigmoid(z):
        y = 1:  loss = -(1-p)^gamma_pos * log(p)
        y = 0:  p_m = max(p - margin, 0); loss = -(p_m)^gamma_neg * log(1 - p_m)
    and the clamped negative branch (p <= margin) contributes neither loss
    nor gradient. Returns (total loss, exact dloss/dlogits).
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if z.shape != y.shape or z.ndim != 1:
        raise DimensionError(f"logits {z.shape} and labels {y.shape} must match (1D)")

    gp, gn, m = cfg.gamma_pos, cfg.gamma_neg, cfg.margin
    total = 0.0
    grad = np.zeros_like(z)
    for k in range(z.size):
        zk = float(z[k])
        p = sigmoid(zk)
        if y[k]:
            lp = _log_sigmoid(zk)
            focus = (1.0 - p) ** gp
            total -= focus * lp
            grad[k] = gp * p * focus * lp - focus * (1.0 - p)
        else:
            pm = max(p - m, 0.0)
            if pm <= 0.0:
                continue
            if m == 0.0:
                # p_m = p: keep log(1-p) in its stable log-sigmoid form
                l1m = _log_sigmoid(-zk)
                focus = p**gn
                total -= focus * l1m
                grad[k] = focus * p - gn * focus * (1.0 - p) * l1m
            else:
                l1m = np.log1p(-pm)
                focus = pm**gn
                total -= focus * l1m
                t1 = 0.0 if gn == 0.0 else -gn * pm ** (gn - 1.0) * l1m
                grad[k] = (t1 + focus / (1.0 - pm)) * p * (1.0 - p)
    return float(total), grad
