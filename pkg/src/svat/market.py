"""Daily OHLCV panels: CSV ingestion, lookback windows, splits, synthetic markets."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError, IngestionError, UsageError

log = logging.getLogger(__name__)

FEATURES = ("open", "high", "low", "close", "volume")
CSV_HEADER = ("date",) + FEATURES
CLOSE = FEATURES.index("close")


@dataclass(frozen=True)
class StockPanel:
    """Aligned history of ``N`` stocks over a common calendar.

    ``features`` has shape ``(N, n_days, 5)`` in :data:`FEATURES` order.
    ``returns[i, t]`` is the close-to-close return realized on day ``t``;
    day 0 has no predecessor and holds NaN.
    """

    symbols: tuple
    dates: tuple
    features: np.ndarray
    returns: np.ndarray

    @property
    def n_stocks(self) -> int:
        return len(self.symbols)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def closes(self) -> np.ndarray:
        return self.features[:, :, CLOSE]

    def day_index(self, date: str) -> int:
        try:
            return self.dates.index(date)
        except ValueError:
            raise UsageError(f"date {date} not in panel calendar") from None


def close_returns(closes: np.ndarray) -> np.ndarray:
    closes = np.asarray(closes, dtype=np.float64)
    out = np.full(closes.shape, np.nan)
    out[..., 1:] = (closes[..., 1:] - closes[..., :-1]) / closes[..., :-1]
    return out


def make_panel(symbols: Sequence[str], dates: Sequence[str], features: np.ndarray) -> StockPanel:
    features = np.ascontiguousarray(features, dtype=np.float64)
    if features.shape != (len(symbols), len(dates), len(FEATURES)):
        raise DataError(f"features shape {features.shape} does not match "
                        f"{len(symbols)} symbols x {len(dates)} days x {len(FEATURES)}")
    closes = features[:, :, CLOSE]
    if np.any(~(closes > 0)):
        i, t = np.argwhere(~(closes > 0))[0]
        raise DataError(f"non-positive close for {symbols[i]} on {dates[t]}")
    return StockPanel(tuple(symbols), tuple(dates), features, close_returns(closes))


# ---------------------------------------------------------------------------
# CSV ingestion


def _read_stock_csv(path: Path) -> dict[str, np.ndarray]:
    rows: dict[str, np.ndarray] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip().lower() for h in header) != CSV_HEADER:
            raise IngestionError(path, 1, f"expected header {','.join(CSV_HEADER)}")
        prev = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise IngestionError(path, lineno, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
            date = row[0].strip()
            try:
                dt.date.fromisoformat(date)
                vals = np.array([float(v) for v in row[1:]])
            except ValueError as exc:
                raise IngestionError(path, lineno, str(exc)) from None
            if not np.isfinite(vals).all():
                raise IngestionError(path, lineno, "non-finite field")
            if vals[CLOSE] <= 0:
                raise DataError(f"{path}:{lineno}: non-positive close {vals[CLOSE]}")
            if prev is not None and date <= prev:
                raise IngestionError(path, lineno, f"dates not ascending ({prev} then {date})")
            prev = date
            rows[date] = vals
    return rows


def ingest_csv(paths: Sequence[str | Path] | str | Path, calendar_policy: str = "majority") -> StockPanel:
    """Load per-stock CSVs into a panel.

    ``paths`` is a directory of ``<symbol>.csv`` files or an explicit list.
    Stocks that do not cover the whole master calendar are dropped. The master
    calendar is chosen by ``calendar_policy``:

    ``majority``      dates present for at least half the stocks
    ``union``         every date seen in any file
    ``intersection``  dates present in every file (never drops a stock)
    """
    if isinstance(paths, (str, Path)) and Path(paths).is_dir():
        paths = sorted(Path(paths).glob("*.csv"))
    paths = [Path(p) for p in paths]
    if not paths:
        raise UsageError("no CSV files to ingest")

    series = {}
    for p in paths:
        rows = _read_stock_csv(p)
        if len(rows) < 2:
            log.warning("dropping %s: only %d trading day(s)", p.stem, len(rows))
            continue
        series[p.stem] = rows
    if not series:
        raise DataError("no stock has at least two trading days")

    counts = Counter(d for rows in series.values() for d in rows)
    n = len(series)
    if calendar_policy == "union":
        calendar = sorted(counts)
    elif calendar_policy == "majority":
        calendar = sorted(d for d, c in counts.items() if 2 * c >= n)
    elif calendar_policy == "intersection":
        calendar = sorted(d for d, c in counts.items() if c == n)
    else:
        raise UsageError(f"unknown calendar policy {calendar_policy!r}")

    keep = []
    for sym in sorted(series):
        rows = series[sym]
        missing = sum(1 for d in calendar if d not in rows)
        if missing:
            log.warning("dropping %s: missing %d of %d calendar days", sym, missing, len(calendar))
            continue
        keep.append(sym)
    if not keep or len(calendar) < 2:
        raise DataError("no stock covers the master calendar")

    features = np.array([[series[s][d] for d in calendar] for s in keep])
    return make_panel(keep, calendar, features)


def write_csv_dir(panel: StockPanel, out_dir: str | Path) -> list[Path]:
    """Write one ``<symbol>.csv`` per stock; floats use ``repr`` so re-ingestion is exact."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, sym in enumerate(panel.symbols):
        path = out_dir / f"{sym}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for t, date in enumerate(panel.dates):
                w.writerow([date] + [repr(float(v)) for v in panel.features[i, t]])
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# splits and examples


@dataclass(frozen=True)
class SplitSpec:
    """Inclusive ``(first_date, last_date)`` ranges of target days."""

    train: tuple
    valid: tuple
    test: tuple

    def __post_init__(self):
        for name in ("train", "valid", "test"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise UsageError(f"{name} range is reversed: {lo} > {hi}")
        if not (self.train[1] < self.valid[0] and self.valid[1] < self.test[0]):
            raise UsageError("split ranges must be chronological and disjoint")

    def days(self, panel: StockPanel, part: str) -> np.ndarray:
        lo, hi = getattr(self, part)
        return np.array([t for t, d in enumerate(panel.dates) if lo <= d <= hi], dtype=int)

    @classmethod
    def by_fraction(cls, panel: StockPanel, train: float = 0.6, valid: float = 0.2) -> "SplitSpec":
        n = panel.n_days
        a = int(round(n * train))
        b = int(round(n * (train + valid)))
        if not 0 < a < b < n:
            raise UsageError(f"cannot split {n} days into {train}/{valid}/rest")
        d = panel.dates
        return cls((d[0], d[a - 1]), (d[a], d[b - 1]), (d[b], d[-1]))

    @classmethod
    def by_dates(cls, panel: StockPanel, train_end: str, valid_end: str) -> "SplitSpec":
        d = panel.dates
        tr = [x for x in d if x <= train_end]
        va = [x for x in d if train_end < x <= valid_end]
        te = [x for x in d if x > valid_end]
        if not (tr and va and te):
            raise UsageError(f"split at {train_end}/{valid_end} leaves an empty range")
        return cls((tr[0], tr[-1]), (va[0], va[-1]), (te[0], te[-1]))

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(tuple(d["train"]), tuple(d["valid"]), tuple(d["test"]))


@dataclass(frozen=True)
class Example:
    stock_index: int
    target_day: int
    window: np.ndarray
    label: float


@dataclass(frozen=True)
class DayBatch:
    """All ``N`` stocks for one target day.

    ``windows[i]`` covers days ``target_day - T .. target_day - 1``;
    ``labels[i]`` is the return realized on ``target_day``.
    """

    target_day: int
    windows: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def examples(self) -> Iterator[Example]:
        for i in range(len(self.labels)):
            yield Example(i, self.target_day, self.windows[i], float(self.labels[i]))


def build_examples(panel: StockPanel, lookback: int, days: Sequence[int]) -> list[DayBatch]:
    """One batch per target day in ``days`` that has a full lookback window."""
    if lookback < 1:
        raise UsageError(f"lookback must be >= 1, got {lookback}")
    out = []
    for t in days:
        t = int(t)
        if t - lookback < 0 or t < 1 or t >= panel.n_days:
            continue
        out.append(DayBatch(t, panel.features[:, t - lookback:t, :], panel.returns[:, t]))
    if not out and len(days):
        log.warning("lookback %d exceeds available history: no batches built", lookback)
    return out


def stack_windows(batches: Sequence[DayBatch]) -> np.ndarray:
    """Concatenate the windows of several days into one ``(days*N, T, d)`` block."""
    return np.concatenate([b.windows for b in batches], axis=0)


def normalize(panel: StockPanel, train_days: Sequence[int], std_floor: float = 1e-8) -> StockPanel:
    """Z-score every feature per stock with statistics from ``train_days`` only.

    Returns are copied untouched.
    """
    train_days = np.asarray(train_days, dtype=int)
    if train_days.size == 0:
        raise UsageError("normalization needs a non-empty training range")
    ref = panel.features[:, train_days, :]
    mu = ref.mean(axis=1, keepdims=True)
    sd = np.maximum(ref.std(axis=1, keepdims=True), std_floor)
    return replace(panel, features=(panel.features - mu) / sd)


# ---------------------------------------------------------------------------
# synthetic markets


@dataclass(frozen=True)
class RegimeSpec:
    """Knobs of the synthetic market.

    Each stock carries a persistent hidden state ``h`` in {-1, +1} that flips
    with probability ``switch_prob`` per day. The next-day return loads on it
    with strength ``signal_strength`` (in units of the stock's volatility), so
    returns are positively autocorrelated while the state lasts. The state
    also leaks into traded volume with loading ``volume_loading``.

    Stocks in the negative state are exposed to crashes: with probability
    ``crash_prob`` a day's return gets an extra ``-crash_size * vol``.
    """

    signal_strength: float = 0.3
    switch_prob: float = 0.05
    volume_loading: float = 0.5
    drift_range: tuple = (-0.0005, 0.0010)
    vol_range: tuple = (0.01, 0.03)
    crash_prob: float = 0.0
    crash_size: float = 4.0
    start_date: str = "2015-01-02"

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def business_days(start: str, n: int) -> list[str]:
    d = dt.date.fromisoformat(start)
    out = []
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d.isoformat())
        d += dt.timedelta(days=1)
    return out


def synth_market(seed: int, n_stocks: int, n_days: int, regime: RegimeSpec | None = None,
                 return_state: bool = False):
    """Geometric random walk with a hidden-state momentum signal.

    With ``return_state`` the hidden states ``(N, n_days)`` are returned as
    well, for experiments that need the ground truth.
    """
    if n_stocks < 2 or n_days < 20:
        raise UsageError(f"synthetic market needs >= 2 stocks and >= 20 days, got {n_stocks}x{n_days}")
    regime = regime or RegimeSpec()
    rng = np.random.default_rng(seed)
    N, T = n_stocks, n_days
    drift = rng.uniform(*regime.drift_range, size=N)
    vol = rng.uniform(*regime.vol_range, size=N)

    state = np.empty((N, T))
    state[:, 0] = rng.choice([-1.0, 1.0], size=N)
    flips = rng.random((N, T)) < regime.switch_prob
    for t in range(1, T):
        state[:, t] = np.where(flips[:, t], -state[:, t - 1], state[:, t - 1])

    eps = rng.standard_normal((N, T))
    crash = (rng.random((N, T)) < regime.crash_prob) & (state < 0)
    log_ret = np.zeros((N, T))
    # return on day t is driven by the state observed at day t-1
    log_ret[:, 1:] = (drift[:, None]
                      + vol[:, None] * (regime.signal_strength * state[:, :-1] + eps[:, 1:])
                      - regime.crash_size * vol[:, None] * crash[:, 1:])
    p0 = rng.uniform(20.0, 200.0, size=N)
    close = p0[:, None] * np.exp(np.cumsum(log_ret, axis=1))

    # intraday path: open near previous close, high/low bracket open and close
    prev_close = np.concatenate([p0[:, None], close[:, :-1]], axis=1)
    gap = vol[:, None] * 0.2 * rng.standard_normal((N, T))
    open_ = prev_close * np.exp(gap)
    spread = vol[:, None] * np.abs(rng.standard_normal((N, T))) * 0.5
    high = np.maximum(open_, close) * np.exp(spread)
    low = np.minimum(open_, close) * np.exp(-spread * rng.random((N, T)))
    base_vol = rng.uniform(1e5, 1e6, size=N)
    volume = base_vol[:, None] * np.exp(regime.volume_loading * state + 0.5 * rng.standard_normal((N, T)))

    features = np.stack([open_, high, low, close, volume], axis=-1)
    width = max(2, len(str(N - 1)))
    symbols = [f"S{i:0{width}d}" for i in range(N)]
    panel = make_panel(symbols, business_days(regime.start_date, T), features)
    if return_state:
        return panel, state
    return panel


def write_manifest(panel: StockPanel, out_dir: str | Path, **meta) -> Path:
    path = Path(out_dir) / "manifest.json"
    doc = {"stocks": panel.n_stocks, "days": panel.n_days, "symbols": list(panel.symbols),
           "first_date": panel.dates[0], "last_date": panel.dates[-1], **meta}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
