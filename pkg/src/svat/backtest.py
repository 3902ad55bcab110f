"""Daily buy-hold-sell evaluation.

Scores dated ``t-1`` pick the top-k stocks at that day's close; the portfolio
earns the sum of their day-``t`` returns. Note the sum: a day's portfolio
return grows with ``k``.

Summary metrics over the daily series ``irr_t``:

* ``irr_total = sum_t irr_t``
* ``sr = mean(irr_t - r_f) / std(irr_t - r_f)``, population std, not annualized
* ``mdd = 100 * |min(min_t irr_t, 0)|``, i.e. the worst single day, in percent
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AlignmentError, DataError, UsageError
from .market import StockPanel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Strategy:
    k: int = 5
    weighting: str = "sum"

    def __post_init__(self):
        if self.k < 1:
            raise UsageError(f"k must be >= 1, got {self.k}")
        if self.weighting not in ("sum", "mean"):
            raise UsageError(f"weighting must be 'sum' or 'mean', got {self.weighting!r}")


@dataclass
class BacktestReport:
    dates: list
    daily_irr: np.ndarray
    selections: list
    irr_total: float
    sr: float
    mdd: float
    r_f: float
    k: int

    @property
    def n_days(self) -> int:
        return len(self.daily_irr)

    def summary(self) -> dict:
        return {"irr_total": self.irr_total, "sr": self.sr, "mdd": self.mdd,
                "n_days": self.n_days, "k": self.k, "r_f": self.r_f}


@dataclass
class ScoreTable:
    """Model scores: ``values[t, i]`` for decision date ``dates[t]`` and ``symbols[i]``."""

    dates: list
    symbols: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.dates), len(self.symbols)):
            raise DataError(f"score matrix {self.values.shape} vs "
                            f"{len(self.dates)} dates x {len(self.symbols)} symbols")


def select_topk(scores, k: int) -> tuple:
    """Indices of the ``k`` highest scores; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if k > scores.size:
        raise UsageError(f"k={k} exceeds the {scores.size} stocks available")
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    # stable sort keeps index order among equal scores
    return tuple(int(i) for i in np.argsort(-scores, kind="stable")[:k])


def summarize(daily_irr, r_f: float = 0.0) -> tuple[float, float, float]:
    """``(irr_total, sr, mdd)``; SR is NaN when the excess series is constant."""
    x = np.asarray(daily_irr, dtype=np.float64)
    if x.size == 0:
        raise UsageError("empty return series")
    irr_total = float(np.sum(x))
    excess = x - r_f
    sd = float(np.std(excess))
    if sd == 0.0:
        log.warning("zero standard deviation of excess returns: Sharpe ratio undefined")
        sr = math.nan
    else:
        sr = float(np.mean(excess) / sd)
    mdd = 100.0 * abs(min(float(np.min(x)), 0.0))
    return irr_total, sr, mdd


def evaluate(scores: np.ndarray, realized: np.ndarray, k: int, r_f: float = 0.0,
             weighting: str = "sum", dates: Sequence | None = None) -> BacktestReport:
    """Backtest from aligned arrays: ``scores[t]`` picks, ``realized[t]`` pays."""
    scores = np.asarray(scores, dtype=np.float64)
    realized = np.asarray(realized, dtype=np.float64)
    if scores.shape != realized.shape or scores.ndim != 2:
        raise AlignmentError(f"scores {scores.shape} vs realized returns {realized.shape}")
    daily = np.empty(scores.shape[0])
    selections = []
    for t in range(scores.shape[0]):
        sel = select_topk(scores[t], k)
        picked = realized[t, list(sel)]
        daily[t] = picked.sum() if weighting == "sum" else picked.mean()
        selections.append(sel)
    irr_total, sr, mdd = summarize(daily, r_f)
    return BacktestReport(list(dates) if dates is not None else list(range(len(daily))),
                          daily, selections, irr_total, sr, mdd, r_f, k)


def _realized_after(panel: StockPanel, dates: Sequence[str]) -> tuple[np.ndarray, list]:
    """Returns realized on the trading day after each decision date."""
    index = {d: t for t, d in enumerate(panel.dates)}
    cols, kept = [], []
    for d in dates:
        if d not in index:
            raise AlignmentError(f"decision date {d} not in panel calendar")
        t = index[d]
        if t + 1 >= panel.n_days:
            continue
        cols.append(t + 1)
        kept.append(d)
    return panel.returns[:, cols].T, kept


def run_backtest(table: ScoreTable, panel: StockPanel, strategy: Strategy = Strategy(),
                 r_f: float = 0.0) -> BacktestReport:
    if list(table.symbols) != list(panel.symbols):
        pos = {s: i for i, s in enumerate(table.symbols)}
        missing = [s for s in panel.symbols if s not in pos]
        if missing:
            raise AlignmentError(f"scores missing for {missing[:5]}")
        values = table.values[:, [pos[s] for s in panel.symbols]]
    else:
        values = table.values
    realized, kept = _realized_after(panel, table.dates)
    if not kept:
        raise AlignmentError("no score date has a following trading day")
    if strategy.k > panel.n_stocks:
        raise UsageError(f"k={strategy.k} exceeds the {panel.n_stocks} stocks in the panel")
    keep_rows = [table.dates.index(d) for d in kept]
    return evaluate(values[keep_rows], realized, strategy.k, r_f, strategy.weighting, kept)


def buy_and_hold(panel: StockPanel, dates: Sequence[str], r_f: float = 0.0) -> BacktestReport:
    """Equal-weighted index of the whole universe, held over the given decision dates."""
    realized, kept = _realized_after(panel, dates)
    if not kept:
        raise UsageError("buy-and-hold needs a non-empty date range")
    daily = realized.mean(axis=1)
    irr_total, sr, mdd = summarize(daily, r_f)
    everything = tuple(range(panel.n_stocks))
    return BacktestReport(kept, daily, [everything] * len(kept), irr_total, sr, mdd, r_f, panel.n_stocks)


def pcc(scores_a, scores_b) -> float:
    """Mean over days of the cross-sectional Pearson correlation."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise UsageError(f"score matrices differ: {a.shape} vs {b.shape}")
    vals = []
    for t in range(a.shape[0]):
        da = a[t] - a[t].mean()
        db = b[t] - b[t].mean()
        sa, sb = np.sqrt(np.mean(da * da)), np.sqrt(np.mean(db * db))
        if sa == 0 or sb == 0:
            log.warning("day %d: zero cross-sectional variance, skipped in PCC", t)
            continue
        vals.append(np.mean(da * db) / (sa * sb))
    if not vals:
        return math.nan
    return float(np.clip(np.mean(vals), -1.0, 1.0))


def tsd(selections_a: Sequence, selections_b: Sequence, k: int) -> float:
    """Mean over days of ``|S_a - S_b| / k``."""
    if len(selections_a) != len(selections_b):
        raise UsageError(f"{len(selections_a)} vs {len(selections_b)} days of selections")
    if not selections_a:
        raise UsageError("no selections")
    diffs = []
    for sa, sb in zip(selections_a, selections_b):
        if len(sa) != k or len(sb) != k:
            raise UsageError(f"selection size differs from k={k}")
        diffs.append(len(set(sa) - set(sb)) / k)
    return float(np.mean(diffs))


# ---------------------------------------------------------------------------
# file formats


def write_scores(path: str | Path, table: ScoreTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "symbol", "score"))
        for t, d in enumerate(table.dates):
            for i, s in enumerate(table.symbols):
                w.writerow((d, s, repr(float(table.values[t, i]))))


def read_scores(path: str | Path) -> ScoreTable:
    by_date: dict[str, dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "symbol", "score"]:
            raise DataError(f"{path}: expected header date,symbol,score")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                d, s, v = row
                by_date.setdefault(d, {})[s] = float(v)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    dates = sorted(by_date)
    if not dates:
        raise DataError(f"{path}: no scores")
    symbols = sorted(by_date[dates[0]])
    values = np.empty((len(dates), len(symbols)))
    for t, d in enumerate(dates):
        row = by_date[d]
        if sorted(row) != symbols:
            raise AlignmentError(f"{path}: date {d} scores a different stock set")
        values[t] = [row[s] for s in symbols]
    return ScoreTable(dates, symbols, values)


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def write_report(out_dir: str | Path, report: BacktestReport, symbols: Sequence[str],
                 stem: str = "report") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = out_dir / f"{stem}.txt"
    lines = [f"{k}={_fmt(v) if isinstance(v, float) else v}" for k, v in report.summary().items()]
    summary.write_text("\n".join(lines) + "\n", encoding="utf-8")
    daily = out_dir / f"{stem}_daily.csv"
    with open(daily, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("date", "irr_t", "selected_symbols"))
        for d, r, sel in zip(report.dates, report.daily_irr, report.selections):
            w.writerow((d, repr(float(r)), "|".join(symbols[i] for i in sel)))
    return summary, daily


def read_report(path: str | Path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, val = line.split("=", 1)
            out[key] = int(val) if key in ("n_days", "k") else float(val)
    return out
