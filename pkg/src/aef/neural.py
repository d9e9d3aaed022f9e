"""Minimal from-scratch neural stack: MLP with ReLU and backprop, Adam, and a
VAE encoder/decoder with the reparameterization trick.

Everything is numpy; matrix products go through BLAS, which is where the
speed lives. Analytic gradients are validated against central finite
differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def he_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


@dataclass
class Mlp:
    """Dense network: ReLU on hidden layers, identity output by default.

    ``final_relu`` turns the output layer into another ReLU stage, used for
    encoder feature stacks whose output feeds further affine heads.
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    final_relu: bool = False

    @classmethod
    def init(cls, layer_sizes: tuple[int, ...] | list[int], rng: np.random.Generator,
             final_relu: bool = False) -> "Mlp":
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        weights = [he_uniform(rng, sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]
        biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]
        return cls(sizes, weights, biases, final_relu)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.layer_sizes, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.final_relu)


@dataclass
class MlpCache:
    inputs: list[np.ndarray]   # layer inputs, inputs[0] is the network input
    pre: list[np.ndarray]      # pre-activation values per layer
    squeezed: bool             # original input was 1-D


def mlp_forward(model: Mlp, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    """Forward pass; returns the output and a cache sufficient for backprop."""
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    h = x[None, :] if squeezed else x
    if h.shape[1] != model.input_dim:
        raise ValueError(f"input dim {h.shape[1]} != model input dim {model.input_dim}")
    inputs = [h]
    pre: list[np.ndarray] = []
    n_layers = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        pre.append(z)
        is_last = i == n_layers - 1
        h = z if (is_last and not model.final_relu) else np.maximum(z, 0.0)
        inputs.append(h)
    out = h[0] if squeezed else h
    return out, MlpCache(inputs, pre, squeezed)


def mlp_backward(model: Mlp, cache: MlpCache, upstream: np.ndarray
                 ) -> tuple[list[np.ndarray], np.ndarray]:
    """Backprop the upstream gradient; returns (parameter grads, input grad).

    Parameter grads are ordered like ``model.parameters()``: W0, b0, W1, b1...
    """
    g = np.asarray(upstream, dtype=np.float64)
    if cache.squeezed:
        g = g[None, :]
    if g.shape != cache.pre[-1].shape:
        raise ValueError(f"upstream shape {g.shape} does not match cache {cache.pre[-1].shape}")
    n_layers = len(model.weights)
    grads: list[np.ndarray] = [np.empty(0)] * (2 * n_layers)
    for i in range(n_layers - 1, -1, -1):
        is_last = i == n_layers - 1
        if not is_last or model.final_relu:
            g = g * (cache.pre[i] > 0.0)
        grads[2 * i] = g.T @ cache.inputs[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ model.weights[i]
    return grads, (g[0] if cache.squeezed else g)


@dataclass
class AdamState:
    """Adam optimizer state; moments are lazily shaped to the parameter list."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_stability: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]
              ) -> list[np.ndarray]:
    """One Adam update, in place on ``params``; returns the updated list.

    Bias correction uses exponent step_count+1 so the very first step is
    already corrected; step_count increments afterwards.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads length mismatch")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    t = state.step_count + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon_stability)
    state.step_count = t
    return params


@dataclass
class NoiseSource:
    """Seeded standard-normal draws; reproducible per seed."""

    generator: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "NoiseSource":
        return cls(np.random.default_rng(seed))

    def standard_normal(self, shape) -> np.ndarray:
        return self.generator.standard_normal(shape)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class VaeModel:
    """Gaussian-latentspace autoencoder.

    The encoder stack ends in a ReLU feature layer feeding two affine heads
    (mean and raw scale); the scale passes through softplus so sigma stays
    strictly positive. The decoder maps latents back to the input space.
    """

    encoder: Mlp
    mu_head: Mlp
    sigma_head: Mlp
    decoder: Mlp
    latent_dim: int

    @classmethod
    def init(
        cls,
        input_dim: int,
        rng: np.random.Generator,
        encoder_hidden: tuple[int, ...] = (128, 64),
        latent_dim: int = 2,
        decoder_hidden: tuple[int, ...] = (64, 128),
    ) -> "VaeModel":
        encoder = Mlp.init((input_dim, *encoder_hidden), rng, final_relu=True)
        feat = encoder_hidden[-1]
        mu_head = Mlp.init((feat, latent_dim), rng)
        sigma_head = Mlp.init((feat, latent_dim), rng)
        decoder = Mlp.init((latent_dim, *decoder_hidden, input_dim), rng)
        return cls(encoder, mu_head, sigma_head, decoder, latent_dim)

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    def parameters(self) -> list[np.ndarray]:
        return (
            self.encoder.parameters()
            + self.mu_head.parameters()
            + self.sigma_head.parameters()
            + self.decoder.parameters()
        )

    def copy(self) -> "VaeModel":
        return VaeModel(self.encoder.copy(), self.mu_head.copy(), self.sigma_head.copy(),
                        self.decoder.copy(), self.latent_dim)


@dataclass
class VaeEncodeCache:
    enc: MlpCache
    mu: MlpCache
    sigma: MlpCache
    sigma_raw: np.ndarray


def vae_encode(model: VaeModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Encode to Gaussian parameters (mu, sigma); sigma is strictly positive."""
    (mu, sigma), _ = vae_encode_with_cache(model, x)
    return mu, sigma


def vae_encode_with_cache(model: VaeModel, x: np.ndarray
                          ) -> tuple[tuple[np.ndarray, np.ndarray], VaeEncodeCache]:
    feat, enc_cache = mlp_forward(model.encoder, x)
    mu, mu_cache = mlp_forward(model.mu_head, feat)
    raw, sigma_cache = mlp_forward(model.sigma_head, feat)
    return (mu, _softplus(raw)), VaeEncodeCache(enc_cache, mu_cache, sigma_cache, raw)


def vae_encode_backward(
    model: VaeModel,
    cache: VaeEncodeCache,
    d_mu: np.ndarray,
    d_sigma: np.ndarray | None = None,
) -> list[np.ndarray]:
    """Backprop head and encoder gradients given upstream d_mu / d_sigma.

    Returns grads aligned with encoder params followed by mu-head then
    sigma-head params (the layout of ``VaeModel.parameters`` up to the
    decoder).
    """
    mu_grads, d_feat = mlp_backward(model.mu_head, cache.mu, d_mu)
    if d_sigma is not None:
        d_raw = d_sigma * _sigmoid(cache.sigma_raw)
        sigma_grads, d_feat2 = mlp_backward(model.sigma_head, cache.sigma, d_raw)
        d_feat = d_feat + d_feat2
    else:
        sigma_grads = [np.zeros_like(p) for p in model.sigma_head.parameters()]
    enc_grads, _ = mlp_backward(model.encoder, cache.enc, d_feat)
    return enc_grads + mu_grads + sigma_grads


def reparameterize(mu: np.ndarray, sigma: np.ndarray, noise: NoiseSource) -> np.ndarray:
    """z = mu + sigma * eps with eps drawn standard normal per coordinate."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise ValueError("mu and sigma must have matching shapes")
    return mu + sigma * noise.standard_normal(mu.shape)


def kl_standard_normal(mu: np.ndarray, sigma: np.ndarray) -> float:
    """KL(N(mu, sigma^2) || N(0, 1)) summed over latent dims, averaged over batch."""
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    per_sample = 0.5 * np.sum(mu**2 + sigma**2 - 1.0 - 2.0 * np.log(sigma), axis=1)
    return float(per_sample.mean())


def vae_loss(x: np.ndarray, reconstruction: np.ndarray, mu: np.ndarray, sigma: np.ndarray,
             beta_kl: float = 1.0) -> float:
    """Mean squared reconstruction error plus beta_kl-weighted KL term."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    recon = np.atleast_2d(np.asarray(reconstruction, dtype=np.float64))
    if x.shape != recon.shape:
        raise ValueError("x and reconstruction must have matching shapes")
    mse = float(np.mean((recon - x) ** 2))
    return mse + beta_kl * kl_standard_normal(mu, sigma)


def vae_loss_and_grads(
    model: VaeModel, batch: np.ndarray, eps: np.ndarray, beta_kl: float = 1.0
) -> tuple[float, list[np.ndarray]]:
    """Loss and analytic gradients for a frozen noise draw ``eps``.

    Keeping eps explicit makes the whole computation a deterministic function
    of (weights, batch, eps) and lets tests check gradients by finite
    differences.
    """
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    b, d = x.shape
    (mu, sigma), enc_cache = vae_encode_with_cache(model, x)
    z = mu + sigma * eps
    recon, dec_cache = mlp_forward(model.decoder, z)

    mse = float(np.mean((recon - x) ** 2))
    kl = kl_standard_normal(mu, sigma)
    loss = mse + beta_kl * kl

    d_recon = 2.0 * (recon - x) / (b * d)
    dec_grads, dz = mlp_backward(model.decoder, dec_cache, d_recon)
    d_mu = dz + beta_kl * mu / b
    d_sigma = dz * eps + beta_kl * (sigma - 1.0 / sigma) / b
    enc_grads = vae_encode_backward(model, enc_cache, d_mu, d_sigma)
    return loss, enc_grads + dec_grads


def vae_train_step(model: VaeModel, batch: np.ndarray, adam: AdamState, noise: NoiseSource,
                   beta_kl: float = 1.0) -> float:
    """One Adam step on the mean batch loss; returns the pre-step loss."""
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if x.shape[0] < 1:
        raise ValueError("batch must be non-empty")
    eps = noise.standard_normal((x.shape[0], model.latent_dim))
    loss, grads = vae_loss_and_grads(model, x, eps, beta_kl)
    adam_step(adam, model.parameters(), grads)
    return loss


# --- checkpoint (de)serialization -----------------------------------------

def mlp_to_dict(model: Mlp) -> dict:
    return {
        "layer_sizes": list(model.layer_sizes),
        "final_relu": model.final_relu,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def mlp_from_dict(data: dict) -> Mlp:
    return Mlp(
        tuple(data["layer_sizes"]),
        [np.asarray(w, dtype=np.float64) for w in data["weights"]],
        [np.asarray(b, dtype=np.float64) for b in data["biases"]],
        bool(data.get("final_relu", False)),
    )


def adam_to_dict(state: AdamState) -> dict:
    return {
        "learning_rate": state.learning_rate,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "epsilon_stability": state.epsilon_stability,
        "step_count": state.step_count,
        "m": [m.tolist() for m in state.m],
        "v": [v.tolist() for v in state.v],
    }


def adam_from_dict(data: dict) -> AdamState:
    return AdamState(
        learning_rate=data["learning_rate"],
        beta1=data["beta1"],
        beta2=data["beta2"],
        epsilon_stability=data["epsilon_stability"],
        step_count=data["step_count"],
        m=[np.asarray(m, dtype=np.float64) for m in data["m"]],
        v=[np.asarray(v, dtype=np.float64) for v in data["v"]],
    )


def vae_to_dict(model: VaeModel) -> dict:
    return {
        "latent_dim": model.latent_dim,
        "encoder": mlp_to_dict(model.encoder),
        "mu_head": mlp_to_dict(model.mu_head),
        "sigma_head": mlp_to_dict(model.sigma_head),
        "decoder": mlp_to_dict(model.decoder),
    }


def vae_from_dict(data: dict) -> VaeModel:
    return VaeModel(
        mlp_from_dict(data["encoder"]),
        mlp_from_dict(data["mu_head"]),
        mlp_from_dict(data["sigma_head"]),
        mlp_from_dict(data["decoder"]),
        int(data["latent_dim"]),
    )
