"""Hierarchical stochastic decoder and edge-probability heads.

Each stochastic layer ``l`` carries latent positions ``z``, relaxed community
memberships ``s`` and two families of node random factors ``gamma`` (activity)
and ``delta`` (popularity). Priors of layer ``l > 1`` are driven by the samples
of layer ``l - 1``, gated by ``s``; posteriors combine those prior features with
the encoder hidden state of the same depth. A column-stochastic linear map
takes the last stochastic layer to the ``D``-dimensional latent space where
edges are generated.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvariantViolation, NumericError, ShapeError
from .samplers import (
    binary_concrete_logit,
    dirichlet_factor_mean,
    sample_dirichlet_factors,
    sample_normal_positions,
    stick_breaking_logits,
)

# lower bound on posterior Gamma shapes; keeps inverse-CDF draws above underflow
SHAPE_FLOOR = 0.05
SIGMA_FLOOR = 1e-4
DIST_EPS = 1e-12
# initial head outputs after softplus: posterior scale of z, Gamma shapes of the factors
INIT_SIGMA = 0.1
INIT_SHAPE = 1.0


@dataclass
class LayerLatents:
    """Samples and distribution parameters of one stochastic decoder layer.

    ``post`` holds the variational parameters ``mu, sigma, pi, xi, psi``;
    ``prior`` holds ``mu, var, pi, xi, psi`` of the matching priors. ``s_logit``
    is the pre-sigmoid relaxed membership (None in the posterior-mean pass).
    """

    z: torch.Tensor
    s: torch.Tensor
    gamma: torch.Tensor
    delta: torch.Tensor
    post: dict
    prior: dict
    s_logit: Optional[torch.Tensor] = None

    def hard_memberships(self, threshold=0.5):
        return (self.s >= threshold).to(torch.int64)


@dataclass
class DecoderOutput:
    layers: list
    z: torch.Tensor
    gamma: torch.Tensor
    delta: torch.Tensor
    extras: dict = field(default_factory=dict)


def _linear(in_dim, out_dim, generator, dtype, scale=1.0):
    lin = nn.Linear(in_dim, out_dim, dtype=dtype)
    bound = scale * np.sqrt(6.0 / (in_dim + out_dim))
    with torch.no_grad():
        lin.weight.uniform_(-bound, bound, generator=generator)
        lin.bias.zero_()
    return lin


def _check_finite(layer_index, **tensors):
    for name, t in tensors.items():
        if t is not None and not torch.isfinite(t).all():
            raise NumericError(f"non-finite {name} in decoder layer {layer_index}")


def _membership(pi_hat, temperature, u, sample):
    if sample:
        s_logit = binary_concrete_logit(pi_hat, temperature, u)
        return torch.sigmoid(s_logit), s_logit
    return (torch.sigmoid(pi_hat) >= 0.5).to(pi_hat.dtype), None


def _factors(shape, u, sample):
    return sample_dirichlet_factors(shape, u) if sample else dirichlet_factor_mean(shape)


def _softplus_inverse(y):
    return float(y + np.log(-np.expm1(-y)))


class PosteriorHeads(nn.Module):
    """Affine heads with domain links: identity for mu, softplus for sigma and shapes."""

    def __init__(self, in_dims, out_dim, generator, dtype, with_delta=True):
        super().__init__()
        self.mu = _linear(in_dims["z"], out_dim, generator, dtype)
        self.sigma = _linear(in_dims["z"], out_dim, generator, dtype)
        self.pi = _linear(in_dims["s"], out_dim, generator, dtype)
        self.xi = _linear(in_dims["gamma"], out_dim, generator, dtype)
        self.psi = _linear(in_dims["delta"], out_dim, generator, dtype) if with_delta else None
        with torch.no_grad():
            self.sigma.bias.fill_(_softplus_inverse(INIT_SIGMA))
            for head in (self.xi, self.psi):
                if head is not None:
                    head.bias.fill_(_softplus_inverse(INIT_SHAPE))


def init_posterior_params(h_first, h_last, heads, prior_logits):
    """First-layer variational parameters from the first and last encoder states.

    Returns a dict with ``mu, sigma, pi, xi, psi`` of shape ``(n, G_1)``;
    ``psi`` is None when ``heads`` has no delta head.
    """
    if h_first is None or h_last is None:
        raise ShapeError("first-layer posterior needs encoder outputs")
    x = torch.cat([h_first, h_last], dim=1)
    return {
        "mu": heads.mu(x),
        "sigma": F.softplus(heads.sigma(x)) + SIGMA_FLOOR,
        "pi": prior_logits + heads.pi(x),
        "xi": F.softplus(heads.xi(x)) + SHAPE_FLOOR,
        "psi": None if heads.psi is None else F.softplus(heads.psi(x)) + SHAPE_FLOOR,
    }


class FirstLayer(nn.Module):
    """Top stochastic layer: fixed priors, posterior from ``[h^(1), h^(L)]``."""

    def __init__(self, hidden_first, hidden_last, size, generator, dtype, undirected=False):
        super().__init__()
        d = hidden_first + hidden_last
        self.size = size
        self.undirected = undirected
        self.heads = PosteriorHeads(dict(z=d, s=d, gamma=d, delta=d), size, generator, dtype, not undirected)

    def forward(self, h_first, h_last, noise, hyper, sample=True):
        n = h_first.shape[0]
        dtype = h_first.dtype
        prior_pi = stick_breaking_logits(hyper["v"], self.size, dtype).expand(n, -1)
        post = init_posterior_params(h_first, h_last, self.heads, prior_pi)
        prior = {
            "mu": torch.zeros(n, self.size, dtype=dtype),
            "var": hyper["prior_var"],
            "pi": prior_pi,
            "xi": torch.full((n, self.size), hyper["xi"], dtype=dtype),
            "psi": None if self.undirected else torch.full((n, self.size), hyper["psi"], dtype=dtype),
        }
        return _assemble(1, post, prior, noise, hyper, sample, self.undirected)


class DecoderLayer(nn.Module):
    """Stochastic layer ``l > 1`` linked to layer ``l - 1`` through ``W_z, W_gamma, W_delta``."""

    def __init__(self, hidden, prev_size, size, generator, dtype, undirected=False, slope=0.2, index=2):
        super().__init__()
        self.size = size
        self.prev_size = prev_size
        self.undirected = undirected
        self.slope = slope
        self.index = index
        scale = np.sqrt(6.0 / (prev_size + size))

        def weight():
            w = torch.empty(size, prev_size, dtype=dtype)
            return nn.Parameter(w.uniform_(-scale, scale, generator=generator))

        self.W_z = weight()
        self.W_gamma = weight()
        self.W_delta = None if undirected else weight()
        dims = dict(z=hidden + size, s=hidden + prev_size, gamma=hidden + size, delta=hidden + size)
        self.heads = PosteriorHeads(dims, size, generator, dtype, not undirected)

    def prior_parameters(self, prev, s, hyper):
        """Gated priors: mean ``s * f(W_z z')``, shapes ``xi + s * softplus(W_gamma gamma')`` etc."""
        mu = s * F.leaky_relu(prev.z @ self.W_z.T, self.slope)
        xi = hyper["xi"] + s * F.softplus(prev.gamma @ self.W_gamma.T)
        psi = None
        if not self.undirected:
            psi = hyper["psi"] + s * F.softplus(prev.delta @ self.W_delta.T)
        return mu, xi, psi

    def forward(self, prev, h, noise, hyper, sample=True):
        if prev.z.shape[1] != self.prev_size:
            raise ShapeError(f"layer {self.index} expects {self.prev_size} inputs, got {prev.z.shape[1]}")
        n = h.shape[0]
        prior_pi = stick_breaking_logits(hyper["v"], self.size, h.dtype).expand(n, -1)
        pi_hat = prior_pi + self.heads.pi(torch.cat([h, prev.s], dim=1))
        s, s_logit = _membership(pi_hat, hyper["temperature"], noise and noise["s"], sample)
        mu_p, xi_p, psi_p = self.prior_parameters(prev, s, hyper)
        hz = torch.cat([h, mu_p], dim=1)
        post = {
            "mu": mu_p + self.heads.mu(hz),
            "sigma": F.softplus(self.heads.sigma(hz)) + SIGMA_FLOOR,
            "pi": pi_hat,
            "xi": F.softplus(self.heads.xi(torch.cat([h, xi_p], dim=1))) + SHAPE_FLOOR,
            "psi": None if self.undirected else F.softplus(self.heads.psi(torch.cat([h, psi_p], dim=1))) + SHAPE_FLOOR,
        }
        prior = {"mu": mu_p, "var": hyper["prior_var"], "pi": prior_pi, "xi": xi_p, "psi": psi_p}
        return _assemble(self.index, post, prior, noise, hyper, sample, self.undirected, s=(s, s_logit))


def _assemble(index, post, prior, noise, hyper, sample, undirected, s=None):
    if s is None:
        s, s_logit = _membership(post["pi"], hyper["temperature"], noise and noise["s"], sample)
    else:
        s, s_logit = s
    if sample:
        z = sample_normal_positions(post["mu"], post["sigma"], noise["z"])
    else:
        z = post["mu"]
    gamma = _factors(post["xi"], noise and noise["gamma"], sample)
    delta = gamma if undirected else _factors(post["psi"], noise and noise["delta"], sample)
    _check_finite(index, z=z, s=s, gamma=gamma, delta=delta, **{k: v for k, v in post.items() if torch.is_tensor(v)})
    return LayerLatents(z, s, gamma, delta, post, prior, s_logit)


def decoder_layer(prev, h, layer, noise, hyper, sample=True):
    """Apply one linked stochastic layer; see :class:`DecoderLayer`."""
    return layer(prev, h, noise, hyper, sample)


def column_stochastic(raw):
    """Softmax over rows: every column is a convex weight vector."""
    return torch.softmax(raw, dim=0)


def output_transform(latents, W_out, atol=1e-6):
    """Map ``z, gamma, delta`` of the last stochastic layer to ``D`` dimensions.

    Raises:
        InvariantViolation: a column of ``W_out`` does not sum to one.
    """
    dev = (W_out.sum(dim=0) - 1.0).abs().max()
    if dev > atol:
        raise InvariantViolation(f"W_out column sums deviate from 1 by {float(dev):.3g}")
    z = latents.z @ W_out
    gamma = latents.gamma @ W_out
    delta = gamma if latents.delta is latents.gamma else latents.delta @ W_out
    return z, gamma, delta


def edge_probability_distance(z_i, z_j, gamma_i, delta_j, beta):
    """``sigmoid(b0 - b_out |gamma_i * (z_i - z_j)| - b_in |delta_j * (z_i - z_j)|)``; broadcasts over rows."""
    diff = z_i - z_j
    b0, b_out, b_in = beta[0], beta[1], beta[2]
    x = b0 - b_out * torch.linalg.vector_norm(gamma_i * diff, dim=-1) - b_in * torch.linalg.vector_norm(delta_j * diff, dim=-1)
    return torch.sigmoid(x)


def edge_probability_inner_product(z_i, z_j, gamma_i, delta_j, beta):
    """``sigmoid((b_out gamma_i * z_i) . (b_in delta_j * z_j))``; broadcasts over rows."""
    return torch.sigmoid(((beta[1] * gamma_i * z_i) * (beta[2] * delta_j * z_j)).sum(dim=-1))


def _safe_sqrt(x):
    # zero (with zero gradient) below DIST_EPS so coincident points have distance exactly 0
    return torch.where(x > DIST_EPS, torch.sqrt(x.clamp_min(DIST_EPS)), torch.zeros_like(x))


def _tie(gamma, delta, beta, undirected):
    if undirected:
        beta = torch.stack([beta[0], beta[1], beta[1]])
        delta = gamma
    return delta, beta


def pairwise_logits(z, gamma, delta, beta, mode="distance", undirected=False):
    """Dense ``(n, n)`` matrix of edge log-odds (diagonal meaningless)."""
    delta, beta = _tie(gamma, delta, beta, undirected)
    if mode == "distance":
        z2 = z * z
        a = gamma * gamma
        b = delta * delta
        d_out2 = (a * z2).sum(1, keepdim=True) - 2.0 * (a * z) @ z.T + a @ z2.T
        d_in2 = z2 @ b.T - 2.0 * z @ (b * z).T + (b * z2).sum(1)[None, :]
        d_out = _safe_sqrt(d_out2)
        d_in = _safe_sqrt(d_in2)
        return beta[0] - beta[1] * d_out - beta[2] * d_in
    if mode == "inner_product":
        return (beta[1] * beta[2]) * ((gamma * z) @ (delta * z).T)
    raise ValueError(f"unknown reconstruction mode {mode!r}")


def pair_logits(z, gamma, delta, beta, src, dst, mode="distance", undirected=False):
    """Edge log-odds for explicit ``(src, dst)`` index pairs."""
    delta, beta = _tie(gamma, delta, beta, undirected)
    zi, zj = z[src], z[dst]
    if mode == "distance":
        diff = zi - zj
        d_out = _safe_sqrt(((gamma[src] * diff) ** 2).sum(-1))
        d_in = _safe_sqrt(((delta[dst] * diff) ** 2).sum(-1))
        return beta[0] - beta[1] * d_out - beta[2] * d_in
    if mode == "inner_product":
        return beta[1] * beta[2] * ((gamma[src] * zi) * (delta[dst] * zj)).sum(-1)
    raise ValueError(f"unknown reconstruction mode {mode!r}")


def reconstruct(final, beta, mode="distance", undirected=False):
    """Edge-probability matrix with zero diagonal.

    Args:
        final: ``(z, gamma, delta)`` from :func:`output_transform`.
        beta: ``(b0, b_out, b_in)``.
        mode: ``"distance"`` or ``"inner_product"``.
        undirected: tie ``delta = gamma`` and ``b_in = b_out``; the result is symmetric.
    """
    z, gamma, delta = final
    beta = torch.as_tensor(beta, dtype=z.dtype)
    P = torch.sigmoid(pairwise_logits(z, gamma, delta, beta, mode, undirected))
    if undirected:
        P = 0.5 * (P + P.T)  # exact symmetry; the two halves differ only by rounding
    return P * (1.0 - torch.eye(z.shape[0], dtype=z.dtype))


class DecoderStack(nn.Module):
    """All decoder parameters: stochastic layers, ``W_out`` and ``beta``.

    Args:
        hidden_sizes: encoder widths ``K_1..K_L`` (one per stochastic layer).
        sizes: stochastic layer widths ``G_1 < G_2 < ...``.
        latent_dim: output dimension ``D``.
        hyper: dict with ``v, temperature, prior_var, xi, psi``.
    """

    def __init__(self, hidden_sizes, sizes, latent_dim, hyper, undirected=False, slope=0.2, generator=None, dtype=torch.float64):
        super().__init__()
        hidden_sizes = tuple(int(k) for k in hidden_sizes)
        sizes = tuple(int(g) for g in sizes)
        if len(hidden_sizes) != len(sizes):
            raise ShapeError("need one encoder layer per stochastic decoder layer")
        self.sizes = sizes
        self.latent_dim = int(latent_dim)
        self.hyper = dict(hyper)
        self.undirected = undirected
        self.first = FirstLayer(hidden_sizes[0], hidden_sizes[-1], sizes[0], generator, dtype, undirected)
        self.layers = nn.ModuleList(
            DecoderLayer(hidden_sizes[i], sizes[i - 1], sizes[i], generator, dtype, undirected, slope, index=i + 1)
            for i in range(1, len(sizes))
        )
        raw = torch.empty(sizes[-1], self.latent_dim, dtype=dtype).normal_(0.0, 1.0, generator=generator)
        self.W_out_raw = nn.Parameter(raw)
        self.beta = nn.Parameter(torch.tensor([0.0, 1.0, 1.0], dtype=dtype))

    @property
    def W_out(self):
        return column_stochastic(self.W_out_raw)

    def set_temperature(self, value):
        self.hyper["temperature"] = float(value)

    def draw_noise(self, n, rng, dtype=torch.float64):
        """Per-layer noise: standard normals for ``z`` and uniforms for ``s, gamma, delta``."""
        noise = []
        for g in self.sizes:
            t = lambda a: torch.as_tensor(a, dtype=dtype)
            layer = {
                "z": t(rng.standard_normal((n, g))),
                "s": t(rng.random((n, g))),
                "gamma": t(rng.random((n, g))),
                "delta": None if self.undirected else t(rng.random((n, g))),
            }
            noise.append(layer)
        return noise

    def forward(self, hidden, noise=None, sample=True):
        """Run every stochastic layer then the output transform.

        Args:
            hidden: encoder states ``[H^(1), ..., H^(L)]``.
            noise: output of :meth:`draw_noise`; required when ``sample``.
            sample: False gives the deterministic posterior-mean pass.
        """
        if sample and noise is None:
            raise ValueError("sampling pass needs noise")
        nz = noise if sample else [None] * len(self.sizes)
        layers = [self.first(hidden[0], hidden[-1], nz[0], self.hyper, sample)]
        for i, layer in enumerate(self.layers, start=1):
            layers.append(decoder_layer(layers[-1], hidden[i], layer, nz[i], self.hyper, sample))
        z, gamma, delta = output_transform(layers[-1], self.W_out)
        return DecoderOutput(layers, z, gamma, delta)
