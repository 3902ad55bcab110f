"""Ranking losses for one trading day of ``N`` stocks.

All pairwise terms run over the full ``N x N`` set of ordered pairs; the
diagonal contributes exactly zero.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import DimensionError, UsageError


def _column(scores) -> Tensor:
    s = dc.as_tensor(scores)
    if s.values.ndim == 1:
        s = dc.reshape(s, (s.shape[0], 1))
    if s.values.ndim != 2 or s.shape[1] != 1:
        raise DimensionError(f"scores must be a column, got {s.shape}")
    return s


def pairwise_hinge(scores: Tensor, labels: np.ndarray, pair_mask: np.ndarray | None = None) -> Tensor:
    """``H[i, j] = max(0, -(s_i - s_j)(y_i - y_j))`` as an ``(N, N)`` tensor."""
    n = scores.shape[0]
    rows = dc.broadcast_cols(scores, n)
    diff = dc.sub(rows, dc.transpose(rows))
    y = np.asarray(labels, dtype=np.float64)
    label_diff = y[:, None] - y[None, :]
    if pair_mask is not None:
        label_diff = label_diff * pair_mask
    return dc.max0(dc.mul(dc.scale(diff, -1.0), Tensor(label_diff)))


def per_stock_losses(scores, labels, alpha: float, pair_mask: np.ndarray | None = None) -> Tensor:
    """Squared error plus ``alpha`` times the row of pairwise hinges, ``(N, 1)``."""
    s = _column(scores)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (s.shape[0],):
        raise DimensionError(f"{len(y)} labels for {s.shape[0]} scores")
    if s.shape[0] == 0:
        raise UsageError("empty batch")
    reg = dc.square(dc.sub(s, Tensor(y[:, None])))
    hinge = dc.sum(pairwise_hinge(s, y, pair_mask), axis=1)
    return dc.add(reg, dc.scale(hinge, alpha))


def clean_loss(scores, labels, alpha: float, pair_mask: np.ndarray | None = None) -> Tensor:
    """Pointwise regression plus pairwise ranking loss over all ordered pairs."""
    return dc.sum(per_stock_losses(scores, labels, alpha, pair_mask))


def adv_loss(adv_scores, labels, returns, alpha: float,
             pair_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Return-weighted adversarial loss and the unweighted per-stock terms.

    Stocks with positive return push their adversarial loss down, stocks with
    negative return push it up. The total may be negative.
    """
    r = np.asarray(returns, dtype=np.float64)
    per = per_stock_losses(adv_scores, labels, alpha, pair_mask)
    if r.shape != (per.shape[0],):
        raise UsageError(f"{len(r)} returns for {per.shape[0]} stocks")
    return dc.sum(dc.mul(Tensor(r[:, None]), per)), per


def combined_loss(clean: Tensor, adv: Tensor, kl: Tensor, lam: float) -> Tensor:
    return dc.add(clean, dc.scale(dc.add(adv, kl), lam))


def subsample_pairs(n: int, cap: int, rng: np.random.Generator) -> np.ndarray:
    """0/1 mask keeping at most ``cap`` partners per anchor row."""
    mask = np.zeros((n, n))
    for i in range(n):
        others = np.delete(np.arange(n), i)
        keep = rng.choice(others, size=min(cap, n - 1), replace=False)
        mask[i, keep] = 1.0
    return mask
