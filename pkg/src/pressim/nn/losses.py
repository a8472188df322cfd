"""Training losses on batches of 80x28 grids.

Every function returns ``(value, grad)`` where ``grad`` is the derivative of
the value with respect to the prediction. Per-sample sums run over all grid
cells and are averaged over the batch.
"""
from __future__ import annotations

import enum

import numpy as np

from ..errors import ShapeMismatch


class LossMode(str, enum.Enum):
    MSE = "mse"
    EQ4_LITERAL = "eq4_literal"


def _check(pred, target):
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape or pred.ndim < 2:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    return pred, target


def squared_error_sum(pred, target):
    """Sum of squared cell errors per sample, batch-averaged (pose and deformation losses)."""
    pred, target = _check(pred, target)
    r = pred - target
    n = pred.shape[0]
    return float(np.sum(r * r)) / n, (2.0 / n) * r


def mse(pred, target):
    """Squared-error sum divided by the number of cells per sample."""
    pred, target = _check(pred, target)
    cells = pred[0].size
    value, grad = squared_error_sum(pred, target)
    return value / cells, grad / cells


def fused_abs_sum(p, q, target, alpha, beta):
    """``sum_cells (alpha |p - t| + beta |q - t|)^2`` per sample, batch-averaged.

    Returns ``(value, dL/dp, dL/dq, dL/dalpha, dL/dbeta)``. The absolute
    value uses sign(0) = 0 as its derivative.
    """
    p, target = _check(p, target)
    q, _ = _check(q, target)
    n = p.shape[0]
    ap, aq = np.abs(p - target), np.abs(q - target)
    s = alpha * ap + beta * aq
    value = float(np.sum(s * s)) / n
    common = (2.0 / n) * s
    dp = common * alpha * np.sign(p - target)
    dq = common * beta * np.sign(q - target)
    dalpha = float(np.sum(common * ap))
    dbeta = float(np.sum(common * aq))
    return value, dp, dq, dalpha, dbeta


def mae(pred, target) -> float:
    pred, target = _check(pred, target)
    return float(np.mean(np.abs(pred - target)))
