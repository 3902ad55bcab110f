"""Ranking entropy: how much a stock's rank moves under sampled perturbations.

Stock ``i`` is scored on ``x_tilde_i + delta`` for ``M`` prior-sampled
perturbations while every other stock keeps its clean score. Each perturbed
score yields a rank; the Shannon entropy (natural log) of the empirical rank
distribution is the stock's risk indicator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from . import diffcore as dc
from .errors import UsageError
from .market import DayBatch


@dataclass(frozen=True)
class EntropyConfig:
    samples: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise UsageError(f"need at least one sample, got {self.samples}")


@dataclass(frozen=True)
class RankSample:
    stock_index: int
    ranks: np.ndarray


def rank_against(clean_scores: np.ndarray, i: int, perturbed) -> np.ndarray:
    """Rank(s) in ``[1, N]`` of stock ``i`` when its score is replaced by ``perturbed``.

    Rank is 1 + the number of other stocks scoring strictly higher, plus the
    number of lower-indexed stocks tying with it.
    """
    clean = np.asarray(clean_scores, dtype=np.float64)
    n = clean.size
    if not 0 <= i < n:
        raise UsageError(f"stock index {i} out of range for {n} stocks")
    others = np.delete(clean, i)
    idx = np.delete(np.arange(n), i)
    p = np.atleast_1d(np.asarray(perturbed, dtype=np.float64))[:, None]
    ahead = (others[None, :] > p) | ((others[None, :] == p) & (idx[None, :] < i))
    return 1 + ahead.sum(axis=1)


def rank_under_perturbation(model, batch: DayBatch, i: int, delta: np.ndarray) -> int:
    """Rank of stock ``i`` on ``x_tilde_i + delta`` against its clean peers."""
    x = model.ranker.embed(batch.windows)
    clean = model.ranker.score(x).values[:, 0]
    if not 0 <= i < len(clean):
        raise UsageError(f"stock index {i} out of range for {len(clean)} stocks")
    row = dc.Tensor(x.values[i:i + 1])
    pert = model.ranker.score_perturbed(row, dc.Tensor(np.atleast_2d(delta)), model.config.epsilon)
    return int(rank_against(clean, i, pert.values[0, 0])[0])


def ranking_entropy(ranks) -> float:
    ranks = np.asarray(getattr(ranks, "ranks", ranks))
    if ranks.size == 0:
        raise UsageError("no rank samples")
    _, counts = np.unique(ranks, return_counts=True)
    p = counts / ranks.size
    h = -float(np.sum(p * np.log(p)))
    return h if h > 0.0 else 0.0


@dataclass
class DayRisk:
    target_day: int
    entropy: np.ndarray
    clean_rank: np.ndarray
    realized: np.ndarray
    ranks: np.ndarray


def quantify_day(model, batch: DayBatch, config: EntropyConfig, rng: np.random.Generator) -> DayRisk:
    """Entropy, clean rank and realized return for every stock of one day."""
    n, M, H = len(batch), config.samples, model.config.latent_dim
    x = model.ranker.embed(batch.windows)
    clean = model.ranker.score(x).values[:, 0]
    clean_rank = np.array([rank_against(clean, i, clean[i])[0] for i in range(n)])
    # all N*M perturbed copies in one pass; row i*M + m is sample m of stock i
    rep = dc.Tensor(np.repeat(x.values, M, axis=0))
    noise = rng.standard_normal((n * M, H))
    delta = model.generator.sample_prior_deltas(rep, noise)
    pert = model.ranker.score_perturbed(rep, delta, model.config.epsilon).values[:, 0].reshape(n, M)
    ranks = np.stack([rank_against(clean, i, pert[i]) for i in range(n)])
    entropy = np.array([ranking_entropy(r) for r in ranks])
    return DayRisk(batch.target_day, entropy, clean_rank, np.asarray(batch.labels), ranks)


def quantify(model, batches: Sequence[DayBatch], config: EntropyConfig) -> list[DayRisk]:
    """Per-day risk tables; day ``t`` draws from its own stream seeded by ``(seed, t)``."""
    return [quantify_day(model, b, config, np.random.default_rng([config.seed, b.target_day]))
            for b in batches]


def entropy_return_correlation(days: Sequence[DayRisk]) -> float:
    """Spearman correlation between entropy and realized return, pooled over stock-days."""
    h = np.concatenate([d.entropy for d in days])
    r = np.concatenate([d.realized for d in days])
    return float(spearmanr(h, r).statistic)


def write_entropy_csv(path: str | Path, days: Sequence[DayRisk], dates: Sequence[str],
                      symbols: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "symbol", "entropy", "clean_rank", "realized_return"))
        for day in days:
            for i, sym in enumerate(symbols):
                w.writerow((dates[day.target_day], sym, repr(float(day.entropy[i])),
                            int(day.clean_rank[i]), repr(float(day.realized[i]))))
