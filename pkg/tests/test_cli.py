import argparse
import csv
import json

import pytest

from svat.cli import RunConfig, build_parser, main, read_config_file, resolve_config
from svat.errors import UsageError

TRAIN_FLAGS = ["--epochs", "2", "--lookback", "4", "--vpg-hidden", "16", "--head-hidden", "8"]


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run_cli("synth", "--stocks", 8, "--days", 60, "--seed", 7, "--out", root / "data") == 0
    assert run_cli("train", "--data", root / "data", "--out", root / "run", *TRAIN_FLAGS) == 0
    return root


class TestConfig:
    def parse(self, *argv):
        return resolve_config(build_parser().parse_args(list(argv)))

    def test_defaults(self):
        cfg = self.parse("train")
        assert cfg == RunConfig()
        assert cfg.k == 5 and cfg.samples == 50 and cfg.epochs == 100

    def test_file_overrides_defaults(self, tmp_path):
        (tmp_path / "c.txt").write_text("epsilon=0.05\nlatent-dim = 8\n# note\nlambda=0.25\n")
        cfg = self.parse("train", "--config", str(tmp_path / "c.txt"))
        assert (cfg.epsilon, cfg.latent_dim, cfg.lam) == (0.05, 8, 0.25)
        assert cfg.alpha == RunConfig.alpha

    def test_flags_override_file(self, tmp_path):
        (tmp_path / "c.txt").write_text("epsilon=0.05\nalpha=0.3\n")
        cfg = self.parse("train", "--config", str(tmp_path / "c.txt"), "--epsilon", "0.002")
        assert cfg.epsilon == 0.002 and cfg.alpha == 0.3

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.txt").write_text("temperature=3\n")
        with pytest.raises(UsageError):
            read_config_file(tmp_path / "c.txt")

    def test_bad_value(self, tmp_path):
        (tmp_path / "c.txt").write_text("epochs=many\n")
        with pytest.raises(UsageError):
            read_config_file(tmp_path / "c.txt")

    def test_boolean_key(self, tmp_path):
        (tmp_path / "c.txt").write_text("no-svat=true\nforce=0\n")
        assert read_config_file(tmp_path / "c.txt") == {"no_svat": True, "force": False}

    def test_tuning_range_flags(self):
        cfg = self.parse("train", "--epsilon", "0.05", "--alpha", "0.5", "--lambda", "0.5")
        tc = cfg.train_config()
        assert (tc.epsilon, tc.alpha, tc.lam) == (0.05, 0.5, 0.5)

    def test_lambda_zero_is_ablation(self):
        assert self.parse("train", "--lambda", "0").train_config().lam == 0.0


class TestSynth:
    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert run_cli("synth", "--stocks", 5, "--days", 30, "--seed", 7, "--out", tmp_path / name) == 0
        files = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_manifest(self, tmp_path):
        run_cli("synth", "--stocks", 6, "--days", 25, "--out", tmp_path / "d")
        doc = json.loads((tmp_path / "d" / "manifest.json").read_text())
        assert doc["stocks"] == 6 and doc["days"] == 25
        assert len(list((tmp_path / "d").glob("*.csv"))) == 6

    def test_zero_stocks(self, tmp_path, capsys):
        assert run_cli("synth", "--stocks", 0, "--out", tmp_path / "d") == 2
        assert "error" in capsys.readouterr().err

    def test_refuses_non_empty(self, tmp_path):
        out = tmp_path / "d"
        out.mkdir()
        (out / "keep.txt").write_text("x")
        assert run_cli("synth", "--stocks", 3, "--days", 20, "--out", out) == 2
        assert run_cli("synth", "--stocks", 3, "--days", 20, "--out", out, "--force") == 0


class TestTrain:
    def test_outputs(self, workspace):
        run = workspace / "run"
        assert (run / "checkpoint_best.svat").is_file() and (run / "checkpoint_final.svat").is_file()
        rows = list(csv.reader(open(run / "epoch_log.csv")))
        assert rows[0] == ["epoch", "L", "L_adv", "L_KL", "L_com", "valid_IRR", "valid_SR", "valid_MDD"]
        assert len(rows) == 3

    def test_negative_epsilon(self, workspace):
        assert run_cli("train", "--data", workspace / "data", "--out", workspace / "x", "--epsilon", -1) == 2

    def test_bad_split_dates(self, workspace):
        assert run_cli("train", "--data", workspace / "data", "--out", workspace / "x",
                       "--train-end", "2015-03-01", "--valid-end", "2015-02-01") == 2

    def test_missing_data(self, tmp_path):
        assert run_cli("train", "--data", tmp_path / "nope", "--out", tmp_path / "x") == 2


class TestBacktest:
    def test_default_k_report(self, workspace):
        out = workspace / "bt"
        assert run_cli("backtest", "--data", workspace / "data", "--checkpoint",
                       workspace / "run" / "checkpoint_best.svat", "--out", out) == 0
        text = (out / "report.txt").read_text()
        for key in ("irr_total", "sr", "mdd", "n_days", "k=5", "r_f"):
            assert key in text
        assert (out / "report_daily.csv").is_file() and (out / "scores.csv").is_file()

    def test_sweep(self, workspace):
        out = workspace / "sweep"
        assert run_cli("backtest", "--data", workspace / "data", "--checkpoint",
                       workspace / "run" / "checkpoint_best.svat", "--out", out, "--sweep-k", "1:3") == 0
        assert sorted(p.name for p in out.glob("report_k*.txt")) == ["report_k1.txt", "report_k2.txt", "report_k3.txt"]

    def test_from_score_file(self, workspace):
        out = workspace / "from_scores"
        scores = workspace / "bt" / "scores.csv"
        if not scores.exists():
            run_cli("backtest", "--data", workspace / "data", "--checkpoint",
                    workspace / "run" / "checkpoint_best.svat", "--out", workspace / "bt")
        assert run_cli("backtest", "--data", workspace / "data", "--scores", scores, "--out", out) == 0
        assert (out / "report.txt").read_text() == (workspace / "bt" / "report.txt").read_text()

    def test_buyhold(self, workspace):
        out = workspace / "bh"
        assert run_cli("backtest", "--data", workspace / "data", "--strategy", "buyhold",
                       "--checkpoint", workspace / "run" / "checkpoint_best.svat", "--out", out) == 0
        assert "k=8" in (out / "buyhold.txt").read_text()

    def test_k_too_large(self, workspace):
        assert run_cli("backtest", "--data", workspace / "data", "--checkpoint",
                       workspace / "run" / "checkpoint_best.svat", "--out", workspace / "x", "--k", 9) == 2

    def test_missing_checkpoint(self, workspace):
        assert run_cli("backtest", "--data", workspace / "data", "--checkpoint", workspace / "none.svat",
                       "--out", workspace / "x") == 2


class TestQuantify:
    def test_single_sample(self, workspace):
        out = workspace / "q1"
        assert run_cli("quantify", "--data", workspace / "data", "--checkpoint",
                       workspace / "run" / "checkpoint_best.svat", "--samples", 1, "--out", out) == 0
        rows = list(csv.DictReader(open(out / "entropy.csv")))
        assert rows and all(float(r["entropy"]) == 0.0 for r in rows)
        dates = {r["date"] for r in rows}
        assert len(rows) == len(dates) * 8

    def test_missing_checkpoint(self, workspace):
        assert run_cli("quantify", "--data", workspace / "data", "--out", workspace / "x") == 2

    def test_default_samples(self):
        args = build_parser().parse_args(["quantify"])
        assert resolve_config(args).samples == 50


class TestVerify:
    def test_passes(self, capsys):
        assert run_cli("verify") == 0
        lines = capsys.readouterr().out.splitlines()
        checks = [l for l in lines if not l.startswith("summary")]
        assert len(checks) > 30
        for line in checks:
            name, tol, obs, verdict = line.split("\t")
            assert tol.startswith("tolerance=") and obs.startswith("observed=") and verdict == "PASS"

    def test_corrupted_kl_fails(self, capsys):
        assert run_cli("verify", "--corrupt-kl-sign") != 0
        out = capsys.readouterr().out
        assert "kl.unit_shift_is_half" in out and "FAIL" in out


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_namespace_without_config():
    assert resolve_config(argparse.Namespace(command="train", epochs=3)).epochs == 3
