"""Built-in verification suite behind ``svat verify``.

Each check reports a name, a tolerance, the observed value and pass/fail.
The suite is self-contained: small fixtures, fixed seeds, no data files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diffcore as dc
from .backtest import evaluate, summarize
from .diffcore import Tape, Tensor, backward
from .losses import adv_loss
from .risk import rank_against, ranking_entropy
from .trainer import SvatModel, TrainConfig, day_objective
from .vpg import GaussianParams, PerturbationGenerator, VpgConfig, init_vpg, kl_divergence


@dataclass(frozen=True)
class CheckResult:
    name: str
    tolerance: float
    observed: float
    passed: bool

    def line(self) -> str:
        return (f"{self.name}\ttolerance={self.tolerance:.3g}\tobserved={self.observed:.6g}\t"
                f"{'PASS' if self.passed else 'FAIL'}")


def _le(name, observed, tol) -> CheckResult:
    return CheckResult(name, tol, float(observed), bool(observed <= tol))


# ---------------------------------------------------------------------------
# gradients


def _positive(rng, shape):
    return rng.uniform(0.5, 2.0, size=shape)


# op name -> (scalar-valued function of the leaves, input arrays)
def _primitive_cases(rng):
    n = lambda *s: rng.normal(size=s)
    away = lambda *s: np.sign(n(*s)) * rng.uniform(0.2, 1.5, size=s)  # keep max0 off its kink
    return {
        "matmul": (lambda a, b: dc.sum(dc.matmul(a, b)), [n(3, 4), n(4, 2)]),
        "add": (lambda a, b: dc.sum(dc.square(dc.add(a, b))), [n(3, 2), n(3, 2)]),
        "sub": (lambda a, b: dc.sum(dc.square(dc.sub(a, b))), [n(3, 2), n(3, 2)]),
        "mul": (lambda a, b: dc.sum(dc.mul(a, b)), [n(3, 2), n(3, 2)]),
        "div": (lambda a, b: dc.sum(dc.div(a, b)), [n(3, 2), _positive(rng, (3, 2))]),
        "concat": (lambda a, b: dc.sum(dc.square(dc.concat([a, b]))), [n(2, 3), n(2, 2)]),
        "tanh": (lambda a: dc.sum(dc.tanh(a)), [n(3, 3)]),
        "sigmoid": (lambda a: dc.sum(dc.sigmoid(a)), [n(3, 3)]),
        "softplus": (lambda a: dc.sum(dc.softplus(a)), [n(3, 3)]),
        "square": (lambda a: dc.sum(dc.square(a)), [n(3, 3)]),
        "exp": (lambda a: dc.sum(dc.exp(a)), [n(3, 3)]),
        "log": (lambda a: dc.sum(dc.log(a)), [_positive(rng, (3, 3))]),
        "max0": (lambda a: dc.sum(dc.max0(a)), [away(3, 3)]),
        "scale": (lambda a: dc.sum(dc.square(dc.scale(a, -1.7))), [n(3, 2)]),
        "shift": (lambda a: dc.sum(dc.square(dc.shift(a, 0.3))), [n(3, 2)]),
        "sum": (lambda a: dc.sum(dc.square(dc.sum(a, axis=1))), [n(3, 4)]),
        "mean": (lambda a: dc.square(dc.mean(a)), [n(3, 4)]),
        "l2_norm": (lambda a: dc.sum(dc.l2_norm(a, axis=1)), [n(3, 4)]),
        "transpose": (lambda a, b: dc.sum(dc.matmul(dc.transpose(a), b)), [n(3, 2), n(3, 4)]),
        "reshape": (lambda a, b: dc.sum(dc.matmul(dc.reshape(a, (2, 3)), b)), [n(3, 2), n(3, 1)]),
        "broadcast_rows": (lambda a, b: dc.sum(dc.mul(dc.broadcast_rows(a, 3), b)), [n(1, 4), n(3, 4)]),
        "broadcast_cols": (lambda a, b: dc.sum(dc.mul(dc.broadcast_cols(a, 4), b)), [n(3, 1), n(3, 4)]),
        "select_step": (lambda a, b: dc.sum(dc.mul(dc.select_step(a, 1), b)), [n(3, 2, 4), n(3, 4)]),
    }


def primitive_gradcheck(op: str, seed: int = 0) -> float:
    """Max relative error of tape gradients against central differences for one primitive."""
    rng = np.random.default_rng(seed)
    fn, arrays = _primitive_cases(rng)[op]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*leaves)
    grads = backward(tape, out)
    worst = 0.0
    for leaf in leaves:
        num = dc.numeric_gradient(lambda: fn(*[Tensor(t.values) for t in leaves]).item(), leaf.values)
        worst = max(worst, dc.relative_error(grads[leaf], num))
    return worst


def tiny_model(seed: int = 0, lam: float = 0.7, alpha: float = 0.6) -> SvatModel:
    """Toy model: T=2 steps of d=2 features, D=4 embedding, H=2 latent."""
    cfg = TrainConfig(alpha=alpha, lam=lam, epsilon=0.1, seed=seed, lookback=2, n_features=2,
                      hidden_size=4, head_hidden=3, latent_dim=2, vpg_hidden=3)
    return SvatModel(cfg)


def full_graph_gradcheck(seed: int = 0, n_stocks: int = 3) -> float:
    """Max per-parameter relative error of d L_com / d theta on the toy model.

    The extracted posterior perturbation and the latent noise are frozen so
    the objective is a deterministic function of the parameters.
    """
    rng = np.random.default_rng(seed)
    model = tiny_model(seed)
    windows = rng.normal(size=(n_stocks, 2, 2))
    labels = rng.normal(scale=0.05, size=n_stocks)
    noise = rng.normal(size=(n_stocks, model.config.latent_dim))
    with Tape() as tape:
        terms = day_objective(model, tape, windows, labels, noise)
    frozen = terms["delta_post"]
    grads = model.store.gradient_map(backward(tape, terms["L_com"]))

    def f():
        with Tape() as t:
            return day_objective(model, t, windows, labels, noise, delta_post=frozen)["L_com"].item()

    worst = 0.0
    for name, param in model.store.items():
        num = dc.numeric_gradient(f, param.values)
        worst = max(worst, dc.relative_error(grads[name], num))
    return worst


# ---------------------------------------------------------------------------
# generator and KL


def norm_contract(epsilon: float, evaluations: int = 10_000, seed: int = 0) -> float:
    """Worst ``| ||delta|| - epsilon |`` over nonzero generator outputs."""
    rng = np.random.default_rng(seed)
    D = 6
    cfg = VpgConfig(epsilon=epsilon, latent_dim=3, encoder_hidden=8, prior_hidden=8, decoder_hidden=8)
    store = dc.ParameterStore()
    init_vpg(store, cfg, D, rng)
    gen = PerturbationGenerator(store, cfg)
    x = Tensor(rng.normal(size=(evaluations, D)))
    delta = gen.sample_prior_deltas(x, rng.normal(size=(evaluations, cfg.latent_dim))).values
    norms = np.linalg.norm(delta, axis=1)
    nonzero = norms[norms != 0.0]
    return float(np.max(np.abs(nonzero - epsilon), initial=0.0))


KlFn = Callable[[GaussianParams, GaussianParams], Tensor]


def _gauss(mu, sigma) -> GaussianParams:
    return GaussianParams(Tensor(np.atleast_2d(mu)), Tensor(np.atleast_2d(sigma)))


def _kl_checks(kl: KlFn, seed: int) -> list[CheckResult]:
    out = []
    v = kl(_gauss([1.0], [1.0]), _gauss([0.0], [1.0])).item()
    out.append(CheckResult("kl.unit_shift_is_half", 0.0, abs(v - 0.5), v == 0.5))
    rng = np.random.default_rng(seed)
    mu, sigma = rng.normal(size=(100, 4)), rng.uniform(0.1, 3.0, size=(100, 4))
    self_kl = kl(_gauss(mu, sigma), _gauss(mu, sigma)).values
    out.append(_le("kl.self_is_zero", float(np.max(np.abs(self_kl))), 1e-12))
    draws = kl(_gauss(rng.normal(size=(10_000, 4)), rng.uniform(0.05, 3.0, size=(10_000, 4))),
               _gauss(rng.normal(size=(10_000, 4)), rng.uniform(0.05, 3.0, size=(10_000, 4)))).values
    lowest = float(np.min(draws))
    out.append(CheckResult("kl.nonnegative", 0.0, lowest, lowest >= 0.0))
    return out


def _negated_kl(post, prior):
    return dc.scale(kl_divergence(post, prior), -1.0)


# ---------------------------------------------------------------------------
# entropy and backtest


def _entropy_checks(seed: int) -> list[CheckResult]:
    out = []
    h = ranking_entropy([4, 4, 4, 4])
    out.append(CheckResult("entropy.agreeing_ranks", 0.0, h, h == 0.0))
    h = ranking_entropy([1, 2, 3, 4, 5])
    out.append(_le("entropy.distinct_ranks", abs(h - math.log(5)), 1e-12))
    h = ranking_entropy([3, 3, 7, 9])
    # 1.5 ln 2 for probabilities (1/2, 1/4, 1/4)
    out.append(_le("entropy.fixture_3379", abs(h - 1.5 * math.log(2)), 1e-4))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(1000):
        n, m = int(rng.integers(2, 12)), int(rng.integers(1, 30))
        clean = rng.normal(size=n)
        i = int(rng.integers(n))
        h = ranking_entropy(rank_against(clean, i, rng.normal(size=m)))
        worst = max(worst, -h, h - math.log(min(m, n)))
    out.append(_le("entropy.bounds", worst, 1e-12))
    return out


def _brute_topk_irr(scores, realized, k):
    daily = []
    for s, r in zip(scores, realized):
        picked = sorted(range(len(s)), key=lambda i: (-s[i], i))[:k]
        daily.append(math.fsum(r[i] for i in picked))
    return daily


def _backtest_checks(seed: int) -> list[CheckResult]:
    out = []
    # second day only keeps the series from being constant
    irr = evaluate(np.array([[3.0, 2.0, 1.0], [1.0, 2.0, 3.0]]),
                   np.array([[0.01, -0.02, 0.5], [0.0, 0.0, 0.0]]), k=2).daily_irr[0]
    out.append(CheckResult("backtest.worked_irr", 0.0, irr, irr == -0.01))
    _, sr, _ = summarize([0.01, 0.03])
    out.append(CheckResult("backtest.worked_sr", 0.0, sr, sr == 2.0))
    _, _, mdd = summarize([0.02, -0.05, 0.01])
    out.append(CheckResult("backtest.worked_mdd", 0.0, mdd, mdd == 5.0))
    rng = np.random.default_rng(seed)
    scores, realized = rng.normal(size=(10, 5)), rng.normal(scale=0.02, size=(10, 5))
    rep = evaluate(scores, realized, k=2)
    daily = _brute_topk_irr(scores, realized, 2)
    mu = math.fsum(daily) / len(daily)
    sd = math.sqrt(math.fsum((x - mu) ** 2 for x in daily) / len(daily))
    err = max(max(abs(a - b) for a, b in zip(rep.daily_irr, daily)),
              abs(rep.irr_total - math.fsum(daily)), abs(rep.sr - mu / sd),
              abs(rep.mdd - 100 * abs(min(min(daily), 0.0))))
    out.append(_le("backtest.fixture_oracle", err, 1e-12))
    return out


def _split_sign_check(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    scores, labels = Tensor(rng.normal(size=(6, 1))), rng.normal(size=6)
    returns = rng.normal(scale=0.02, size=6)
    flipped = returns.copy()
    flipped[2] = -flipped[2]
    _, per = adv_loss(scores, labels, returns, 0.5)
    _, per_f = adv_loss(scores, labels, flipped, 0.5)
    a, b = per.values[2, 0] * returns[2], per_f.values[2, 0] * flipped[2]
    return CheckResult("split_sign.flip", 0.0, abs(a + b), bool(a == -b))


def run_checks(seed: int = 0, corrupt_kl_sign: bool = False) -> list[CheckResult]:
    results = []
    for op in sorted(_primitive_cases(np.random.default_rng(0))):
        results.append(_le(f"grad.primitive.{op}", primitive_gradcheck(op, seed), 1e-5))
    results.append(_le("grad.full_objective", full_graph_gradcheck(seed), 1e-4))
    for eps in (0.001, 0.01, 0.1):
        results.append(_le(f"norm.epsilon_{eps:g}", norm_contract(eps, seed=seed), 1e-9))
    results.extend(_kl_checks(_negated_kl if corrupt_kl_sign else kl_divergence, seed))
    results.extend(_entropy_checks(seed))
    results.extend(_backtest_checks(seed))
    results.append(_split_sign_check(seed))
    return results


def print_report(results: list[CheckResult]) -> None:
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"summary\tchecks={len(results)}\tfailed={failed}\t{'PASS' if failed == 0 else 'FAIL'}")
