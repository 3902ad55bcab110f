import logging
import math

import numpy as np
import pytest

from svat.backtest import (ScoreTable, Strategy, buy_and_hold, evaluate, pcc, read_report, read_scores,
                           run_backtest, select_topk, summarize, tsd, write_report, write_scores)
from svat.errors import AlignmentError, UsageError
from svat.market import make_panel

# 5 stocks x 10 decision days; top-2 each day is picked by hand below
SCORES = np.array([
    [5, 4, 3, 2, 1],
    [1, 2, 3, 4, 5],
    [3, 5, 1, 4, 2],
    [2, 1, 5, 3, 4],
    [4, 3, 2, 1, 5],
    [1, 5, 4, 3, 2],
    [5, 1, 2, 4, 3],
    [2, 4, 5, 1, 3],
    [3, 2, 4, 5, 1],
    [4, 5, 3, 2, 1],
], dtype=float)
# realized next-day returns, in percent
RETURNS_PCT = np.array([
    [1, 2, -1, 0, 3],
    [0, 1, 2, -2, 1],
    [2, 1, 0, 3, -1],
    [-1, 0, -3, 1, -2],
    [1, 1, 1, 1, 1],
    [0, -1, 4, 2, 0],
    [2, 0, 1, -1, 0],
    [0, 2, 2, 0, 5],
    [1, 0, -2, -1, 3],
    [0, 2, 0, 1, 1],
], dtype=float)
RETURNS = RETURNS_PCT / 100.0

# hand table: picks, daily IRR in percent
PICKS = [(0, 1), (4, 3), (1, 3), (2, 4), (4, 0), (1, 2), (0, 3), (2, 1), (3, 2), (1, 0)]
DAILY = [0.03, -0.01, 0.04, -0.05, 0.02, 0.03, 0.01, 0.04, -0.03, 0.02]
IRR_TOTAL = 0.10
# mean 1%, squared deviations sum to 84 (%^2) over 10 days: SR = 1 / sqrt(8.4)
SR = 0.34503277967117707
MDD = 5.0


class TestSelect:
    def test_tie_goes_to_lower_index(self):
        assert select_topk([1.0, 1.0, 0.5], 1) == (0,)

    def test_all(self):
        assert set(select_topk([0.3, 0.1, 0.2], 3)) == {0, 1, 2}

    def test_hand_sort(self):
        assert set(select_topk([0.1, 0.9, 0.5], 2)) == {1, 2}

    def test_k_too_large(self):
        with pytest.raises(UsageError):
            select_topk([0.1, 0.2], 3)

    def test_shift_invariance(self, rng):
        s = rng.normal(size=8)
        assert select_topk(s, 3) == select_topk(s + 7.5, 3)


class TestWorkedExamples:
    def test_irr_is_a_sum(self):
        rep = evaluate(np.array([[2.0, 1.0, 0.0], [0.0, 1.0, 2.0]]),
                       np.array([[0.01, -0.02, 0.3], [0.0, 0.0, 0.0]]), k=2)
        assert rep.daily_irr[0] == -0.01

    def test_sharpe(self):
        assert summarize([0.01, 0.03])[1] == 2.0

    def test_mdd(self):
        assert summarize([0.02, -0.05, 0.01])[2] == 5.0
        assert summarize([0.02, 0.0, 0.01])[2] == 0.0

    def test_constant_series_sharpe_undefined(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert math.isnan(summarize([0.01, 0.01])[1])
        assert "Sharpe" in caplog.text


class TestFixture:
    def test_hand_table(self):
        rep = evaluate(SCORES, RETURNS, k=2)
        assert [set(s) for s in rep.selections] == [set(p) for p in PICKS]
        np.testing.assert_allclose(rep.daily_irr, DAILY, rtol=0, atol=1e-12)
        assert abs(rep.irr_total - IRR_TOTAL) <= 1e-12
        assert abs(rep.sr - SR) <= 1e-12
        assert abs(rep.mdd - MDD) <= 1e-12

    def test_total_is_exact_sum(self):
        rep = evaluate(SCORES, RETURNS, k=2)
        assert rep.irr_total == np.sum(rep.daily_irr)

    def test_risk_free_rate(self):
        # the excess series then has mean zero
        assert abs(evaluate(SCORES, RETURNS, k=2, r_f=0.01).sr) <= 1e-12

    def test_mean_weighting_halves(self):
        rep = evaluate(SCORES, RETURNS, k=2, weighting="mean")
        np.testing.assert_allclose(rep.daily_irr, np.array(DAILY) / 2, rtol=0, atol=1e-12)

    def test_irr_additive_over_ranges(self):
        full = evaluate(SCORES, RETURNS, k=2).irr_total
        parts = evaluate(SCORES[:4], RETURNS[:4], k=2).irr_total + evaluate(SCORES[4:], RETURNS[4:], k=2).irr_total
        assert full == pytest.approx(parts, abs=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(AlignmentError):
            evaluate(SCORES, RETURNS[:5], k=2)


def fixture_panel():
    """Panel whose day-(t+1) returns are the fixture's row t."""
    closes = np.empty((5, 11))
    closes[:, 0] = 100.0
    for t in range(10):
        closes[:, t + 1] = closes[:, t] * (1.0 + RETURNS[t])
    feats = np.repeat(closes[:, :, None], 5, axis=2)
    dates = [f"2021-03-{d + 1:02d}" for d in range(11)]
    return make_panel([f"S{i}" for i in range(5)], dates, feats)


class TestPanelBacktest:
    def test_matches_fixture(self):
        panel = fixture_panel()
        table = ScoreTable(list(panel.dates[:10]), list(panel.symbols), SCORES)
        rep = run_backtest(table, panel, Strategy(k=2))
        np.testing.assert_allclose(rep.daily_irr, DAILY, rtol=0, atol=1e-12)
        assert abs(rep.sr - SR) <= 1e-12 and abs(rep.mdd - MDD) <= 1e-12
        assert rep.dates == list(panel.dates[:10])

    def test_last_day_has_no_outcome(self):
        panel = fixture_panel()
        table = ScoreTable(list(panel.dates[8:]), list(panel.symbols), np.vstack([SCORES[8], SCORES[9], SCORES[0]]))
        assert run_backtest(table, panel, Strategy(k=2)).n_days == 2

    def test_symbol_order_is_aligned(self):
        panel = fixture_panel()
        order = [4, 2, 0, 3, 1]
        table = ScoreTable(list(panel.dates[:10]), [panel.symbols[i] for i in order], SCORES[:, order])
        np.testing.assert_allclose(run_backtest(table, panel, Strategy(k=2)).daily_irr, DAILY, atol=1e-12)

    def test_unknown_date(self):
        panel = fixture_panel()
        table = ScoreTable(["1999-01-01"], list(panel.symbols), SCORES[:1])
        with pytest.raises(AlignmentError):
            run_backtest(table, panel)

    def test_k_too_large(self):
        panel = fixture_panel()
        with pytest.raises(UsageError):
            run_backtest(ScoreTable(list(panel.dates[:10]), list(panel.symbols), SCORES), panel, Strategy(k=6))


class TestBuyAndHold:
    def test_symmetric_cancel(self):
        feats = np.repeat(np.array([[100.0, 102.0], [100.0, 98.0]])[:, :, None], 5, axis=2)
        panel = make_panel(["A", "B"], ["2021-01-01", "2021-01-02"], feats)
        assert abs(buy_and_hold(panel, ["2021-01-01"]).daily_irr[0]) <= 1e-15

    def test_single_stock(self):
        feats = np.repeat(np.array([[100.0, 101.0, 99.0]])[:, :, None], 5, axis=2)
        panel = make_panel(["A"], ["2021-01-01", "2021-01-02", "2021-01-03"], feats)
        np.testing.assert_array_equal(buy_and_hold(panel, panel.dates[:2]).daily_irr, panel.returns[0, 1:])

    def test_equals_full_mean_portfolio(self):
        panel = fixture_panel()
        table = ScoreTable(list(panel.dates[:10]), list(panel.symbols), SCORES)
        a = buy_and_hold(panel, panel.dates[:10])
        b = run_backtest(table, panel, Strategy(k=5, weighting="mean"))
        np.testing.assert_allclose(a.daily_irr, b.daily_irr, rtol=0, atol=1e-15)


class TestComparison:
    def test_pcc_cases(self, rng):
        a = rng.normal(size=(6, 5))
        assert pcc(a, a) == pytest.approx(1.0, abs=1e-12)
        assert pcc(a, -a) == pytest.approx(-1.0, abs=1e-12)
        assert pcc(a, 2 * a + 3) == pytest.approx(1.0, abs=1e-12)
        b = rng.normal(size=(6, 5))
        assert pcc(a, b) == pytest.approx(pcc(b, a), abs=1e-15)

    def test_pcc_skips_flat_day(self, rng, caplog):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        b[1] = 1.0
        with caplog.at_level(logging.WARNING):
            v = pcc(a, b)
        keep = [0, 2]
        assert v == pytest.approx(pcc(a[keep], b[keep]), abs=1e-15)

    def test_tsd_cases(self):
        same = [(0, 1, 2, 3, 4)] * 3
        assert tsd(same, same, 5) == 0.0
        assert tsd([(0, 1)], [(2, 3)], 2) == 1.0
        assert tsd([(0, 1, 2, 3, 4)], [(0, 1, 2, 3, 9)], 5) == pytest.approx(0.2, abs=1e-15)
        a, b = [(0, 1, 2), (3, 4, 5)], [(0, 1, 7), (3, 8, 9)]
        assert tsd(a, b, 3) == tsd(b, a, 3)

    def test_tsd_mismatched_days(self):
        with pytest.raises(UsageError):
            tsd([(0,)], [(0,), (1,)], 1)


class TestFiles:
    def test_scores_round_trip(self, tmp_path, rng):
        table = ScoreTable(["2021-01-04", "2021-01-05"], ["A", "B", "C"], rng.normal(size=(2, 3)))
        write_scores(tmp_path / "s.csv", table)
        back = read_scores(tmp_path / "s.csv")
        assert back.dates == table.dates and back.symbols == table.symbols
        np.testing.assert_array_equal(back.values, table.values)

    def test_report_files(self, tmp_path):
        rep = evaluate(SCORES, RETURNS, k=2, dates=[f"d{t}" for t in range(10)])
        summary, daily = write_report(tmp_path, rep, ["A", "B", "C", "D", "E"])
        back = read_report(summary)
        assert set(back) == {"irr_total", "sr", "mdd", "n_days", "k", "r_f"}
        assert back["irr_total"] == rep.irr_total and back["sr"] == rep.sr and back["k"] == 2
        lines = daily.read_text().splitlines()
        assert lines[0] == "date,irr_t,selected_symbols"
        assert lines[1].split(",")[2] == "A|B"
        assert len(lines) == 11
