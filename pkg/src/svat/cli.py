"""Command-line entry point: ``svat {synth,train,backtest,quantify,verify}``.

Every option can also come from a flat ``key=value`` file passed with
``--config``; keys are the flag names without the leading dashes
(``latent-dim`` and ``latent_dim`` are both accepted). Flags beat the file,
the file beats built-in defaults.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .backtest import ScoreTable, Strategy, buy_and_hold, read_scores, run_backtest, write_report, write_scores
from .errors import SvatError, UsageError
from .market import RegimeSpec, SplitSpec, ingest_csv, synth_market, write_csv_dir, write_manifest
from .risk import EntropyConfig, quantify, write_entropy_csv
from .trainer import Checkpoint, TrainConfig, prepare, train, write_log

log = logging.getLogger("svat")


@dataclass(frozen=True)
class RunConfig:
    data: str = "data"
    out: str = "out"
    seed: int = 0
    # training
    epsilon: float = 0.01
    alpha: float = 0.5
    lam: float = 0.5
    lr: float = 1e-3
    epochs: int = 100
    lookback: int = 8
    latent_dim: int = 16
    psi_kind: str = "recurrent"
    hidden_size: int = 16
    head_hidden: int = 64
    vpg_hidden: int = 128
    pair_subsample: int = 0
    no_svat: bool = False
    train_end: str = ""
    valid_end: str = ""
    calendar_policy: str = "majority"
    # evaluation
    k: int = 5
    rf: float = 0.0
    samples: int = 50
    sweep_k: str = ""
    strategy: str = "topk"
    checkpoint: str = ""
    scores: str = ""
    # synthetic data
    stocks: int = 20
    days: int = 300
    signal_strength: float = RegimeSpec.signal_strength
    crash_prob: float = RegimeSpec.crash_prob
    force: bool = False

    def train_config(self) -> TrainConfig:
        return TrainConfig(alpha=self.alpha, lam=self.lam, epsilon=self.epsilon, lr=self.lr,
                           epochs=self.epochs, lookback=self.lookback, seed=self.seed,
                           latent_dim=self.latent_dim, psi_kind=self.psi_kind,
                           hidden_size=self.hidden_size, head_hidden=self.head_hidden,
                           vpg_hidden=self.vpg_hidden, pair_subsample=self.pair_subsample or None,
                           k=self.k, rf=self.rf, svat=not self.no_svat)


_ALIASES = {"lambda": "lam"}
_FIELDS = {f.name: f for f in fields(RunConfig)}


def _key(name: str) -> str:
    name = name.strip().lstrip("-").replace("-", "_")
    return _ALIASES.get(name, name)


def _coerce(name: str, raw):
    kind = _FIELDS[name].type
    if kind == "bool":
        if isinstance(raw, bool):
            return raw
        if str(raw).lower() in ("1", "true", "yes", "on"):
            return True
        if str(raw).lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return {"int": int, "float": float, "str": str}[kind](raw)
    except ValueError:
        raise UsageError(f"{name}: cannot parse {raw!r} as {kind}") from None


def read_config_file(path: str | Path) -> dict:
    out = {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {path} not found")
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, val = line.split("=", 1)
        name = _key(key)
        if name not in _FIELDS:
            raise UsageError(f"{path}:{lineno}: unknown key {key.strip()!r}")
        out[name] = _coerce(name, val.strip())
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = replace(cfg, **read_config_file(args.config))
    flags = {k: v for k, v in vars(args).items() if k in _FIELDS and v is not None}
    return replace(cfg, **{k: _coerce(k, v) for k, v in flags.items()})


# ---------------------------------------------------------------------------
# helpers


def _load_panel(cfg: RunConfig):
    if not Path(cfg.data).is_dir():
        raise UsageError(f"data directory {cfg.data} not found")
    return ingest_csv(cfg.data, cfg.calendar_policy)


def _split(cfg: RunConfig, panel) -> SplitSpec:
    if cfg.train_end or cfg.valid_end:
        if not (cfg.train_end and cfg.valid_end):
            raise UsageError("--train-end and --valid-end go together")
        return SplitSpec.by_dates(panel, cfg.train_end, cfg.valid_end)
    return SplitSpec.by_fraction(panel)


def _load_checkpoint(cfg: RunConfig) -> Checkpoint:
    if not cfg.checkpoint:
        raise UsageError("--checkpoint is required")
    if not Path(cfg.checkpoint).is_file():
        raise UsageError(f"checkpoint {cfg.checkpoint} not found")
    ck = Checkpoint.load(cfg.checkpoint)
    if ck.epoch < 1 or ck.split is None:
        raise UsageError(f"checkpoint {cfg.checkpoint} holds no trained model")
    return ck


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _test_scores(ck: Checkpoint, panel) -> ScoreTable:
    """Clean scores on the test split, dated by decision day (target day - 1)."""
    split = SplitSpec.from_dict(ck.split)
    _, parts = prepare(panel, split, ck.config.lookback)
    if not parts["test"]:
        raise UsageError("test split has no days with a full lookback window")
    model = ck.model()
    values = model.predict_days(parts["test"])
    dates = [panel.dates[b.target_day - 1] for b in parts["test"]]
    return ScoreTable(dates, list(panel.symbols), values)


def _parse_sweep(spec: str) -> range:
    try:
        a, b = (int(x) for x in spec.split(":"))
    except ValueError:
        raise UsageError(f"--sweep-k expects a:b, got {spec!r}") from None
    if a < 1 or b < a:
        raise UsageError(f"bad k range {spec!r}")
    return range(a, b + 1)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    if out.exists() and any(out.iterdir()) and not cfg.force:
        raise UsageError(f"{out} is not empty; pass --force to overwrite")
    regime = RegimeSpec(signal_strength=cfg.signal_strength, crash_prob=cfg.crash_prob)
    panel = synth_market(cfg.seed, cfg.stocks, cfg.days, regime)
    if out.exists() and cfg.force:
        for f in out.glob("*.csv"):
            f.unlink()
    write_csv_dir(panel, out)
    write_manifest(panel, out, seed=cfg.seed, regime=regime.to_dict())
    print(f"wrote {panel.n_stocks} stocks x {panel.n_days} days to {out}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    panel = _load_panel(cfg)
    split = _split(cfg, panel)
    tc = cfg.train_config()
    out = _out_dir(cfg)
    result = train(panel, split, tc, on_epoch=lambda row: log.info(
        "epoch %d L=%.5g L_com=%.5g valid_SR=%.4g", row["epoch"], row["L"], row["L_com"], row["valid_SR"]))
    result.best.save(out / "checkpoint_best.svat")
    result.final.save(out / "checkpoint_final.svat")
    write_log(out / "epoch_log.csv", result.log)
    print(f"best epoch {result.best.epoch} (valid SR {result.best.valid_sr:.4f}); wrote {out}")
    return 0


def cmd_backtest(cfg: RunConfig) -> int:
    panel = _load_panel(cfg)
    out = _out_dir(cfg)
    if cfg.strategy == "buyhold":
        if cfg.checkpoint:
            split = SplitSpec.from_dict(_load_checkpoint(cfg).split)
        else:
            split = _split(cfg, panel)
        days = split.days(panel, "test")
        dates = [panel.dates[t - 1] for t in days if t >= 1]
        report = buy_and_hold(panel, dates, cfg.rf)
        write_report(out, report, panel.symbols, "buyhold")
        print(f"buyhold irr_total={report.irr_total:.6f} sr={report.sr:.6f} mdd={report.mdd:.4f}")
        return 0
    if cfg.strategy != "topk":
        raise UsageError(f"unknown strategy {cfg.strategy!r}")
    if cfg.scores:
        table = read_scores(cfg.scores)
    else:
        table = _test_scores(_load_checkpoint(cfg), panel)
        write_scores(out / "scores.csv", table)
    ks = _parse_sweep(cfg.sweep_k) if cfg.sweep_k else [cfg.k]
    for k in ks:
        if k > panel.n_stocks:
            raise UsageError(f"k={k} exceeds the {panel.n_stocks} stocks in the panel")
    for k in ks:
        report = run_backtest(table, panel, Strategy(k), cfg.rf)
        write_report(out, report, panel.symbols, f"report_k{k}" if cfg.sweep_k else "report")
        print(f"k={k} irr_total={report.irr_total:.6f} sr={report.sr:.6f} mdd={report.mdd:.4f}")
    return 0


def cmd_quantify(cfg: RunConfig) -> int:
    ck = _load_checkpoint(cfg)
    if not ck.config.svat:
        raise UsageError("checkpoint was trained without the perturbation generator")
    panel = _load_panel(cfg)
    _, parts = prepare(panel, SplitSpec.from_dict(ck.split), ck.config.lookback)
    days = quantify(ck.model(), parts["test"], EntropyConfig(cfg.samples, cfg.seed))
    out = _out_dir(cfg)
    write_entropy_csv(out / "entropy.csv", days, panel.dates, panel.symbols)
    print(f"wrote {len(days) * panel.n_stocks} rows to {out / 'entropy.csv'}")
    return 0


def cmd_verify(cfg: RunConfig, corrupt_kl_sign: bool = False) -> int:
    from .verify import print_report, run_checks

    results = run_checks(seed=cfg.seed, corrupt_kl_sign=corrupt_kl_sign)
    print_report(results)
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value file")
    common.add_argument("--seed", type=int)
    common.add_argument("--data")
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="store_true")

    hyper = argparse.ArgumentParser(add_help=False)
    for flag, kind in (("--epsilon", float), ("--alpha", float), ("--lambda", float), ("--lr", float),
                       ("--epochs", int), ("--lookback", int), ("--latent-dim", int),
                       ("--hidden-size", int), ("--head-hidden", int), ("--vpg-hidden", int),
                       ("--pair-subsample", int)):
        dest = _key(flag)
        hyper.add_argument(flag, dest=dest, type=kind)
    hyper.add_argument("--psi-kind", dest="psi_kind", choices=("concat", "recurrent"))
    hyper.add_argument("--no-svat", dest="no_svat", action="store_const", const=True)
    hyper.add_argument("--train-end", dest="train_end")
    hyper.add_argument("--valid-end", dest="valid_end")
    hyper.add_argument("--calendar-policy", dest="calendar_policy",
                       choices=("majority", "union", "intersection"))

    p = argparse.ArgumentParser(prog="svat", description="Split variational adversarial training for stock ranking")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic market")
    s.add_argument("--stocks", type=int)
    s.add_argument("--days", type=int)
    s.add_argument("--signal-strength", dest="signal_strength", type=float)
    s.add_argument("--crash-prob", dest="crash_prob", type=float)
    s.add_argument("--force", action="store_const", const=True)

    sub.add_parser("train", parents=[common, hyper], help="train a model")

    b = sub.add_parser("backtest", parents=[common, hyper], help="top-k backtest on the test split")
    b.add_argument("--checkpoint")
    b.add_argument("--scores", help="score CSV instead of a checkpoint")
    b.add_argument("--strategy", choices=("topk", "buyhold"))
    b.add_argument("--k", type=int)
    b.add_argument("--rf", type=float)
    b.add_argument("--sweep-k", dest="sweep_k")

    q = sub.add_parser("quantify", parents=[common], help="ranking entropy on the test split")
    q.add_argument("--checkpoint")
    q.add_argument("--samples", type=int)
    q.add_argument("--calendar-policy", dest="calendar_policy",
                   choices=("majority", "union", "intersection"))

    v = sub.add_parser("verify", parents=[common], help="run the built-in verification suite")
    v.add_argument("--corrupt-kl-sign", action="store_true", help=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            if cfg.stocks < 2 or cfg.days < 20:
                raise UsageError("--stocks must be >= 2 and --days >= 20")
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "backtest":
            return cmd_backtest(cfg)
        if args.command == "quantify":
            return cmd_quantify(cfg)
        return cmd_verify(cfg, corrupt_kl_sign=args.corrupt_kl_sign)
    except UsageError as exc:
        print(f"svat: error: {exc}", file=sys.stderr)
        return 2
    except SvatError as exc:
        print(f"svat: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
