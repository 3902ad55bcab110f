"""Backbone stock model: window embedding plus a shared scoring head.

Every stock in a batch goes through the same parameters and no operation mixes
rows, so the model treats the stocks of a day as an unordered set.

The recurrent embedding is a minimal gated unit (one forget gate)::

    f_t = sigmoid(x_t W_f + h_{t-1} U_f + b_f)
    c_t = tanh(x_t W_c + (f_t * h_{t-1}) U_c + b_c)
    h_t = h_{t-1} + f_t * (c_t - h_{t-1})

starting from ``h_0 = 0``; the embedding is ``h_T``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ParameterStore, Tensor
from .errors import ContractError, DimensionError, UsageError


@dataclass(frozen=True)
class BackboneConfig:
    psi_kind: str = "recurrent"
    lookback: int = 8
    n_features: int = 5
    hidden_size: int = 16
    head_hidden: int = 64

    def __post_init__(self):
        if self.psi_kind not in ("concat", "recurrent"):
            raise UsageError(f"psi_kind must be 'concat' or 'recurrent', got {self.psi_kind!r}")
        if min(self.lookback, self.n_features, self.hidden_size, self.head_hidden) < 1:
            raise UsageError("backbone sizes must be positive")

    @property
    def embed_dim(self) -> int:
        if self.psi_kind == "concat":
            return self.lookback * self.n_features
        return self.hidden_size

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ScoreBatch:
    clean_scores: np.ndarray
    labels: np.ndarray
    adv_scores: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.clean_scores)
        if len(self.labels) != n or (self.adv_scores is not None and len(self.adv_scores) != n):
            raise DimensionError("score batch vectors must share length N")


def init_ranker(store: ParameterStore, cfg: BackboneConfig, rng: np.random.Generator) -> None:
    D, d = cfg.embed_dim, cfg.n_features
    if cfg.psi_kind == "recurrent":
        for gate in ("f", "c"):
            store.add(f"psi.W_{gate}", dc.glorot(rng, d, D))
            store.add(f"psi.U_{gate}", dc.glorot(rng, D, D))
            store.add(f"psi.b_{gate}", np.zeros((1, D)))
    store.add("head.W1", dc.glorot(rng, D, cfg.head_hidden))
    store.add("head.b1", np.zeros((1, cfg.head_hidden)))
    store.add("head.w2", dc.glorot(rng, cfg.head_hidden, 1))
    store.add("head.b2", np.zeros((1, 1)))


def dense(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return dc.add(dc.matmul(x, W), dc.broadcast_rows(b, x.shape[0]))


class Ranker:
    def __init__(self, store: ParameterStore, cfg: BackboneConfig):
        self.store = store
        self.cfg = cfg

    @property
    def parameter_names(self) -> list[str]:
        return self.store.names("psi.") + self.store.names("head.")

    def embed(self, windows) -> Tensor:
        """``(N, T, d)`` windows (or a single ``(T, d)`` window) to ``(N, D)``."""
        w = dc.as_tensor(windows)
        if w.values.ndim == 2:
            w = dc.reshape(w, (1,) + w.shape)
        cfg = self.cfg
        if w.values.ndim != 3 or w.shape[1:] != (cfg.lookback, cfg.n_features):
            raise DimensionError(f"window shape {w.shape[1:]} != ({cfg.lookback}, {cfg.n_features})")
        n = w.shape[0]
        if cfg.psi_kind == "concat":
            return dc.reshape(w, (n, cfg.embed_dim))

        s = self.store
        bf = dc.broadcast_rows(s["psi.b_f"], n)
        bc = dc.broadcast_rows(s["psi.b_c"], n)
        # input projections for all steps in one matmul each
        flat = dc.reshape(w, (n * cfg.lookback, cfg.n_features))
        xf = dc.reshape(dc.matmul(flat, s["psi.W_f"]), (n, cfg.lookback, cfg.embed_dim))
        xc = dc.reshape(dc.matmul(flat, s["psi.W_c"]), (n, cfg.lookback, cfg.embed_dim))
        h = None
        for t in range(cfg.lookback):
            pf = dc.add(dc.select_step(xf, t), bf)
            pc = dc.add(dc.select_step(xc, t), bc)
            if h is None:
                f = dc.sigmoid(pf)
                c = dc.tanh(pc)
                h = dc.mul(f, c)
            else:
                f = dc.sigmoid(dc.add(pf, dc.matmul(h, s["psi.U_f"])))
                c = dc.tanh(dc.add(pc, dc.matmul(dc.mul(f, h), s["psi.U_c"])))
                h = dc.add(h, dc.mul(f, dc.sub(c, h)))
        return h

    def score(self, x_tilde: Tensor) -> Tensor:
        """Two-layer tanh head, ``(N, D) -> (N, 1)``."""
        x_tilde = dc.as_tensor(x_tilde)
        if x_tilde.values.ndim != 2 or x_tilde.shape[1] != self.cfg.embed_dim:
            raise DimensionError(f"embedding shape {x_tilde.shape}, expected (N, {self.cfg.embed_dim})")
        s = self.store
        hidden = dc.tanh(dense(x_tilde, s["head.W1"], s["head.b1"]))
        return dense(hidden, s["head.w2"], s["head.b2"])

    def score_perturbed(self, x_tilde: Tensor, delta: Tensor, epsilon: float) -> Tensor:
        norms = np.sqrt(np.sum(np.asarray(delta.values) ** 2, axis=-1))
        if np.any(norms > epsilon + 1e-9):
            raise ContractError(f"perturbation norm {norms.max():.3g} exceeds epsilon {epsilon}")
        return self.score(dc.add(x_tilde, delta))

    def predict(self, windows: np.ndarray) -> np.ndarray:
        """Clean scores as a flat array; no tape recording."""
        return self.score(self.embed(windows)).values[:, 0].copy()
