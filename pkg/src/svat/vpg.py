"""Variational perturbation generator.

Training path: clean-loss gradient -> ``delta_post`` -> posterior Gaussian ->
reparameterized ``z`` -> decoder -> perturbation on the epsilon-sphere.
Test path: the prior network replaces the posterior, no labels needed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ParameterStore, Tensor
from .errors import ContractError, DimensionError, UsageError
from .ranker import dense


@dataclass(frozen=True)
class VpgConfig:
    """``latent_dim`` defaults to 16; published experiments do not state it."""

    epsilon: float = 0.01
    latent_dim: int = 16
    encoder_hidden: int = 128
    prior_hidden: int = 128
    decoder_hidden: int = 128

    def __post_init__(self):
        if not self.epsilon > 0:
            raise UsageError(f"epsilon must be positive, got {self.epsilon}")
        if self.latent_dim < 1:
            raise UsageError(f"latent_dim must be >= 1, got {self.latent_dim}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GaussianParams:
    """Diagonal Gaussian, one row per example."""

    mu: Tensor
    sigma: Tensor


def init_vpg(store: ParameterStore, cfg: VpgConfig, embed_dim: int, rng: np.random.Generator) -> None:
    D, H = embed_dim, cfg.latent_dim

    def mlp2(prefix, n_in, width):
        store.add(f"{prefix}.W1", dc.glorot(rng, n_in, width))
        store.add(f"{prefix}.b1", np.zeros((1, width)))
        store.add(f"{prefix}.W2", dc.glorot(rng, width, width))
        store.add(f"{prefix}.b2", np.zeros((1, width)))

    for name, n_in, width in (("post", 2 * D, cfg.encoder_hidden), ("prior", D, cfg.prior_hidden)):
        mlp2(f"vpg.{name}", n_in, width)
        store.add(f"vpg.{name}.W_mu", dc.glorot(rng, width, H))
        store.add(f"vpg.{name}.b_mu", np.zeros((1, H)))
        store.add(f"vpg.{name}.W_sigma", dc.glorot(rng, width, H))
        store.add(f"vpg.{name}.b_sigma", np.zeros((1, H)))
    store.add("vpg.gen.W1", dc.glorot(rng, H + D, cfg.decoder_hidden))
    store.add("vpg.gen.b1", np.zeros((1, cfg.decoder_hidden)))
    store.add("vpg.gen.W2", dc.glorot(rng, cfg.decoder_hidden, D))
    store.add("vpg.gen.b2", np.zeros((1, D)))


def extract_posterior_delta(grad: np.ndarray, epsilon: float) -> np.ndarray:
    """Scale each row of ``grad`` onto the epsilon-sphere; zero rows stay zero."""
    grad = np.atleast_2d(np.asarray(grad, dtype=np.float64))
    norms = np.sqrt(np.sum(grad * grad, axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    return epsilon * grad / safe


def _sphere(g: Tensor, epsilon: float) -> Tensor:
    norms = dc.l2_norm(g, axis=1)
    # rows with g = 0 divide by 1 and stay exactly zero
    guard = Tensor((norms.values == 0).astype(np.float64))
    safe = dc.add(norms, guard)
    return dc.scale(dc.div(g, dc.broadcast_cols(safe, g.shape[1])), epsilon)


class PerturbationGenerator:
    def __init__(self, store: ParameterStore, cfg: VpgConfig):
        self.store = store
        self.cfg = cfg

    @property
    def parameter_names(self) -> list[str]:
        return self.store.names("vpg.")

    def _gaussian(self, prefix: str, inputs: Tensor) -> GaussianParams:
        s = self.store
        h = dc.tanh(dense(inputs, s[f"{prefix}.W1"], s[f"{prefix}.b1"]))
        h = dc.tanh(dense(h, s[f"{prefix}.W2"], s[f"{prefix}.b2"]))
        mu = dense(h, s[f"{prefix}.W_mu"], s[f"{prefix}.b_mu"])
        sigma = dc.softplus(dense(h, s[f"{prefix}.W_sigma"], s[f"{prefix}.b_sigma"]))
        return GaussianParams(mu, sigma)

    def encode_posterior(self, delta_post, x_tilde: Tensor) -> GaussianParams:
        delta_post = dc.as_tensor(delta_post)
        if delta_post.shape != x_tilde.shape:
            raise DimensionError(f"delta_post {delta_post.shape} vs x_tilde {x_tilde.shape}")
        return self._gaussian("vpg.post", dc.concat([delta_post, x_tilde], axis=1))

    def encode_prior(self, x_tilde: Tensor) -> GaussianParams:
        return self._gaussian("vpg.prior", x_tilde)

    def decode_delta(self, z: Tensor, x_tilde: Tensor) -> Tensor:
        s = self.store
        h = dc.tanh(dense(dc.concat([z, x_tilde], axis=1), s["vpg.gen.W1"], s["vpg.gen.b1"]))
        g = dense(h, s["vpg.gen.W2"], s["vpg.gen.b2"])
        return _sphere(g, self.cfg.epsilon)

    def sample_prior_deltas(self, x_tilde: Tensor, noise: np.ndarray) -> Tensor:
        """Perturbations for test-time use: ``noise`` has one row per row of ``x_tilde``."""
        return self.decode_delta(sample_z(self.encode_prior(x_tilde), noise), x_tilde)


def sample_z(params: GaussianParams, noise: np.ndarray) -> Tensor:
    """Location-scale reparameterization ``mu + sigma * noise``."""
    noise = Tensor(noise)
    if noise.shape != params.mu.shape:
        raise DimensionError(f"noise {noise.shape} vs mu {params.mu.shape}")
    return dc.add(params.mu, dc.mul(params.sigma, noise))


def kl_divergence(post: GaussianParams, prior: GaussianParams) -> Tensor:
    """Closed-form KL(post || prior) per row, shape ``(N, 1)``."""
    if post.mu.shape != prior.mu.shape or post.sigma.shape != prior.sigma.shape:
        raise DimensionError("posterior and prior dimensions differ")
    if np.any(post.sigma.values <= 0) or np.any(prior.sigma.values <= 0):
        raise ContractError("Gaussian scale must be strictly positive")
    log_ratio = dc.sub(dc.log(prior.sigma), dc.log(post.sigma))
    num = dc.add(dc.square(post.sigma), dc.square(dc.sub(post.mu, prior.mu)))
    quad = dc.div(num, dc.scale(dc.square(prior.sigma), 2.0))
    return dc.sum(dc.shift(dc.add(log_ratio, quad), -0.5), axis=1)
