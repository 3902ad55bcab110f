import math

import numpy as np
import pytest

from svat.diffcore import Tensor
from svat.errors import UsageError
from svat.market import SplitSpec, synth_market
from svat.risk import (EntropyConfig, quantify, quantify_day, rank_against, rank_under_perturbation,
                       ranking_entropy, write_entropy_csv)
from svat.trainer import SvatModel, TrainConfig, prepare


class TestRank:
    def test_hand_example(self):
        assert rank_against([0.5, 0.2, 0.1], 1, 0.15)[0] == 2

    def test_top(self):
        assert rank_against([0.5, 0.2, 0.1], 2, 0.9)[0] == 1

    def test_bottom(self):
        assert rank_against([0.5, 0.2, 0.1], 0, -1.0)[0] == 3

    def test_ties_favour_lower_index(self):
        clean = [0.3, 0.3, 0.3]
        assert [rank_against(clean, i, 0.3)[0] for i in range(3)] == [1, 2, 3]

    def test_vectorized(self):
        np.testing.assert_array_equal(rank_against([0.5, 0.2, 0.1], 1, [0.6, 0.15, 0.0]), [1, 2, 3])

    def test_out_of_range(self):
        with pytest.raises(UsageError):
            rank_against([0.1, 0.2], 2, 0.0)


class TestEntropy:
    def test_identical_ranks(self):
        assert ranking_entropy([2, 2, 2]) == 0.0

    def test_fixture(self):
        assert ranking_entropy([3, 3, 7, 9]) == pytest.approx(1.0397, abs=1e-4)

    @pytest.mark.parametrize("m", [1, 2, 5, 50])
    def test_all_distinct(self, m):
        assert ranking_entropy(np.arange(1, m + 1)) == pytest.approx(math.log(m), abs=1e-12)

    def test_empty(self):
        with pytest.raises(UsageError):
            ranking_entropy([])

    def test_bad_sample_count(self):
        with pytest.raises(UsageError):
            EntropyConfig(samples=0)


@pytest.fixture(scope="module")
def setup():
    panel = synth_market(8, 6, 60)
    split = SplitSpec.by_fraction(panel)
    cfg = TrainConfig(lookback=3, hidden_size=4, head_hidden=6, latent_dim=3, vpg_hidden=8, epsilon=0.1)
    _, parts = prepare(panel, split, 3)
    return SvatModel(cfg), parts["test"], panel


class TestQuantify:
    def test_zero_delta_gives_clean_rank(self, setup):
        model, batches, _ = setup
        b = batches[0]
        day = quantify_day(model, b, EntropyConfig(3), np.random.default_rng(0))
        for i in range(len(b)):
            assert rank_under_perturbation(model, b, i, np.zeros(4)) == day.clean_rank[i]

    def test_single_sample_zero_entropy(self, setup):
        model, batches, _ = setup
        days = quantify(model, batches, EntropyConfig(samples=1))
        assert all(np.all(d.entropy == 0.0) for d in days)

    def test_bounds_and_rank_range(self, setup):
        model, batches, panel = setup
        days = quantify(model, batches, EntropyConfig(samples=30))
        n = panel.n_stocks
        for d in days:
            assert d.ranks.shape == (n, 30)
            assert d.ranks.min() >= 1 and d.ranks.max() <= n
            assert np.all(d.entropy >= 0) and np.all(d.entropy <= math.log(min(30, n)) + 1e-12)
            np.testing.assert_array_equal(np.sort(d.clean_rank), np.arange(1, n + 1))

    def test_matches_single_stock_path(self, setup):
        model, batches, _ = setup
        b = batches[1]
        cfg = EntropyConfig(samples=4)
        day = quantify_day(model, b, cfg, np.random.default_rng(5))
        # replay the same noise through the per-stock path
        rng = np.random.default_rng(5)
        noise = rng.standard_normal((len(b) * 4, model.config.latent_dim))
        x = model.ranker.embed(b.windows)
        for i in range(len(b)):
            rows = Tensor(np.repeat(x.values[i:i + 1], 4, axis=0))
            deltas = model.generator.sample_prior_deltas(rows, noise[i * 4:(i + 1) * 4]).values
            ranks = [rank_under_perturbation(model, b, i, d) for d in deltas]
            np.testing.assert_array_equal(day.ranks[i], ranks)

    def test_deterministic(self, setup):
        model, batches, _ = setup
        a = quantify(model, batches, EntropyConfig(samples=10, seed=3))
        b = quantify(model, batches, EntropyConfig(samples=10, seed=3))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.ranks, y.ranks)

    def test_csv(self, setup, tmp_path):
        model, batches, panel = setup
        days = quantify(model, batches, EntropyConfig(samples=5))
        write_entropy_csv(tmp_path / "e.csv", days, panel.dates, panel.symbols)
        lines = (tmp_path / "e.csv").read_text().splitlines()
        assert lines[0] == "date,symbol,entropy,clean_rank,realized_return"
        assert len(lines) - 1 == len(batches) * panel.n_stocks
