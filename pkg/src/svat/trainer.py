"""Split variational adversarial training.

Per trading day the step is:

1. clean forward and clean loss ``L``
2. d L / d x_tilde per stock, scaled onto the epsilon-sphere (held constant)
3. posterior Gaussian and one reparameterized latent sample per stock
4. decoded perturbation, adversarial forward and the return-weighted ``L_adv``
5. prior Gaussian and ``L_KL``
6. one Adam step on ranker and generator parameters from
   ``L_com = L + lam * (L_adv + L_KL)``

Model selection keeps the epoch with the best validation Sharpe ratio.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from . import diffcore as dc
from .backtest import evaluate
from .diffcore import AdamState, ParameterStore, Tape, backward
from .errors import NumericError, TrainingDiverged, UsageError
from .losses import adv_loss, clean_loss, combined_loss, subsample_pairs
from .market import DayBatch, SplitSpec, StockPanel, build_examples, normalize, stack_windows
from .ranker import BackboneConfig, Ranker
from .ranker import init_ranker
from .vpg import PerturbationGenerator, VpgConfig, extract_posterior_delta, init_vpg, kl_divergence, sample_z

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "L", "L_adv", "L_KL", "L_com", "valid_IRR", "valid_SR", "valid_MDD")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.5
    lam: float = 0.5
    epsilon: float = 0.01
    lr: float = 1e-3
    epochs: int = 100
    lookback: int = 8
    seed: int = 0
    latent_dim: int = 16
    psi_kind: str = "recurrent"
    hidden_size: int = 16
    head_hidden: int = 64
    n_features: int = 5
    vpg_hidden: int = 128
    pair_subsample: int | None = None
    k: int = 5
    rf: float = 0.0
    svat: bool = True
    shuffle: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise UsageError(f"epsilon must be positive, got {self.epsilon}")
        if not self.lr > 0:
            raise UsageError(f"learning rate must be positive, got {self.lr}")
        if self.alpha < 0 or self.lam < 0:
            raise UsageError("alpha and lambda must be non-negative")
        if self.epochs < 1:
            raise UsageError(f"epochs must be >= 1, got {self.epochs}")
        if self.lookback < 1:
            raise UsageError(f"lookback must be >= 1, got {self.lookback}")
        if self.pair_subsample is not None and self.pair_subsample < 1:
            raise UsageError("pair_subsample must be >= 1")

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(self.psi_kind, self.lookback, self.n_features, self.hidden_size, self.head_hidden)

    def vpg(self) -> VpgConfig:
        return VpgConfig(self.epsilon, self.latent_dim, self.vpg_hidden, self.vpg_hidden, self.vpg_hidden)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class SvatModel:
    """Ranker and perturbation generator over one shared parameter store."""

    def __init__(self, config: TrainConfig, store: ParameterStore | None = None):
        self.config = config
        if store is None:
            store = ParameterStore()
            ss = np.random.SeedSequence(config.seed)
            rank_seed, vpg_seed = ss.spawn(2)
            init_ranker(store, config.backbone(), np.random.default_rng(rank_seed))
            init_vpg(store, config.vpg(), config.backbone().embed_dim, np.random.default_rng(vpg_seed))
        self.store = store
        self.ranker = Ranker(store, config.backbone())
        self.generator = PerturbationGenerator(store, config.vpg())

    def predict_days(self, batches: Sequence[DayBatch]) -> np.ndarray:
        """Clean scores, shape ``(len(batches), N)``."""
        if not batches:
            return np.empty((0, 0))
        flat = self.ranker.predict(stack_windows(batches))
        return flat.reshape(len(batches), -1)


def day_objective(model: SvatModel, tape: Tape, windows: np.ndarray, labels: np.ndarray,
                  noise: np.ndarray | None, delta_post: np.ndarray | None = None,
                  pair_mask: np.ndarray | None = None) -> dict:
    """Build the loss graph for one day on ``tape``.

    Returns a dict of tensors ``L, L_adv, L_KL, L_com`` plus ``x_tilde`` and the
    constant ``delta_post`` actually used. Passing ``delta_post`` freezes the
    extractor output (finite-difference checks need that).
    """
    cfg = model.config
    term = "L"
    try:
        x = model.ranker.embed(windows)
        L = clean_loss(model.ranker.score(x), labels, cfg.alpha, pair_mask)
        out = {"x_tilde": x, "L": L}
        if not cfg.svat:
            out["L_com"] = L
            return out
        if delta_post is None:
            delta_post = extract_posterior_delta(backward(tape, L)[x], cfg.epsilon)
        out["delta_post"] = delta_post
        term = "L_adv"
        gen = model.generator
        post = gen.encode_posterior(delta_post, x)
        delta = gen.decode_delta(sample_z(post, noise), x)
        y_adv = model.ranker.score_perturbed(x, delta, cfg.epsilon)
        out["L_adv"], out["per_stock_adv"] = adv_loss(y_adv, labels, labels, cfg.alpha, pair_mask)
        out["delta"] = delta
        term = "L_KL"
        out["L_KL"] = dc.sum(kl_divergence(post, gen.encode_prior(x)))
        term = "L_com"
        out["L_com"] = combined_loss(L, out["L_adv"], out["L_KL"], cfg.lam)
        return out
    except TrainingDiverged:
        raise
    except NumericError as exc:
        raise TrainingDiverged(term, -1, -1) from exc


@dataclass
class Checkpoint:
    params: dict
    config: TrainConfig
    adam: AdamState
    rng_state: dict
    epoch: int
    split: dict | None = None
    valid_sr: float = math.nan
    kind: str = "final"

    def save(self, path: str | Path) -> None:
        arrays = {f"param/{n}": a for n, a in self.params.items()}
        for n in self.params:
            if n in self.adam.first_moment:
                arrays[f"adam.m/{n}"] = self.adam.first_moment[n]
                arrays[f"adam.v/{n}"] = self.adam.second_moment[n]
        meta = {
            "config": self.config.to_dict(),
            "split": self.split,
            "rng_state": self.rng_state,
            "epoch": self.epoch,
            "kind": self.kind,
            "valid_sr": None if math.isnan(self.valid_sr) else self.valid_sr,
            "adam": {"beta1": self.adam.beta1, "beta2": self.adam.beta2,
                     "numeric_floor": self.adam.numeric_floor, "step_count": self.adam.step_count},
        }
        ckpt_io.dump(path, arrays, meta)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        arrays, meta = ckpt_io.load(path)
        params = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("param/")}
        a = meta["adam"]
        adam = AdamState(a["beta1"], a["beta2"], a["numeric_floor"], a["step_count"],
                         {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("adam.m/")},
                         {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("adam.v/")})
        sr = meta.get("valid_sr")
        return cls(params, TrainConfig.from_dict(meta["config"]), adam, meta["rng_state"],
                   meta["epoch"], meta.get("split"), math.nan if sr is None else sr, meta.get("kind", "final"))

    def model(self) -> SvatModel:
        m = SvatModel(self.config)
        m.store.load(self.params)
        return m


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    log: list
    model: SvatModel


def prepare(panel: StockPanel, split: SplitSpec, lookback: int) -> tuple[StockPanel, dict]:
    """Normalize with train-range statistics and build day batches per split part."""
    norm = normalize(panel, split.days(panel, "train"))
    parts = {p: build_examples(norm, lookback, split.days(norm, p)) for p in ("train", "valid", "test")}
    return norm, parts


def _rng_states(rngs: dict) -> dict:
    return {k: r.bit_generator.state for k, r in rngs.items()}


def train(panel: StockPanel, split: SplitSpec, config: TrainConfig,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    _, parts = prepare(panel, split, config.lookback)
    train_batches, valid_batches = parts["train"], parts["valid"]
    if not train_batches:
        raise UsageError("no training batches: check the split and lookback")
    n = panel.n_stocks
    if config.k > n:
        raise UsageError(f"k={config.k} exceeds the {n} stocks in the panel")

    model = SvatModel(config)
    store = model.store
    state = AdamState()
    ss = np.random.SeedSequence(config.seed).spawn(5)
    # separate streams so shuffling never depends on whether noise was drawn
    rngs = {"shuffle": np.random.default_rng(ss[2]), "noise": np.random.default_rng(ss[3]),
            "pairs": np.random.default_rng(ss[4])}
    H = config.latent_dim
    valid_realized = np.array([b.labels for b in valid_batches])

    best = None
    best_sr = -math.inf
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rngs["shuffle"].permutation(len(train_batches)) if config.shuffle else range(len(train_batches))
        totals = dict.fromkeys(("L", "L_adv", "L_KL", "L_com"), 0.0)
        for b in order:
            batch = train_batches[b]
            noise = rngs["noise"].standard_normal((n, H)) if config.svat else None
            mask = (subsample_pairs(n, config.pair_subsample, rngs["pairs"])
                    if config.pair_subsample else None)
            try:
                with Tape() as tape:
                    terms = day_objective(model, tape, batch.windows, batch.labels, noise, pair_mask=mask)
                grads = backward(tape, terms["L_com"])
            except TrainingDiverged as exc:
                raise TrainingDiverged(exc.term, epoch, batch.target_day) from exc
            dc.adam_step(store, store.gradient_map(grads), state, config.lr)
            for key in totals:
                if key in terms:
                    totals[key] += terms[key].item()

        row = {"epoch": epoch, **{k: v / len(train_batches) for k, v in totals.items()}}
        if valid_batches:
            rep = evaluate(model.predict_days(valid_batches), valid_realized, config.k, config.rf)
            row.update(valid_IRR=rep.irr_total, valid_SR=rep.sr, valid_MDD=rep.mdd)
        else:
            row.update(valid_IRR=math.nan, valid_SR=math.nan, valid_MDD=math.nan)
        history.append(row)
        if on_epoch:
            on_epoch(row)

        sr = row["valid_SR"]
        if best is None or (not math.isnan(sr) and sr > best_sr):
            best_sr = sr if not math.isnan(sr) else best_sr
            best = Checkpoint(store.snapshot(), config, copy.deepcopy(state), _rng_states(rngs),
                              epoch, split.to_dict(), sr, "best")

    final = Checkpoint(store.snapshot(), config, copy.deepcopy(state), _rng_states(rngs),
                       config.epochs, split.to_dict(), history[-1]["valid_SR"], "final")
    return TrainResult(best, final, history, model)


def write_log(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in rows:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])
