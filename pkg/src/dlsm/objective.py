"""Negative ELBO: per-layer KL divergences plus adjacency reconstruction cross-entropy."""

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .decoder import pair_logits, pairwise_logits
from .errors import DomainError, NumericError
from .samplers import LOGIT_CLAMP

PROB_EPS = 1e-7


def kl_normal(mu_q, sigma_q, mu_p, sigma_p):
    """Closed-form ``KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2))`` summed over all entries."""
    mu_q, sigma_q, mu_p, sigma_p = (torch.as_tensor(t, dtype=torch.float64) if not torch.is_tensor(t) else t for t in (mu_q, sigma_q, mu_p, sigma_p))
    if (sigma_q <= 0).any() or (sigma_p <= 0).any():
        raise DomainError("Normal scales must be positive")
    ratio = (sigma_q / sigma_p) ** 2
    kl = 0.5 * (ratio + ((mu_q - mu_p) / sigma_p) ** 2 - 1.0 - torch.log(ratio))
    return kl.sum()


def _logistic_logpdf(t):
    return -t - 2.0 * F.softplus(-t)


def kl_concrete(q_logits, p_logits, temperature, sample, prior_temperature=None, sample_is_logit=False):
    """Single-sample estimate of ``KL(q || p)`` between Binary Concrete densities.

    Evaluated in logit space, where the relaxed variable ``y = logit(s)`` has
    density ``temperature * logistic(temperature * y - logits)``; the Jacobian
    of the sigmoid cancels in the ratio.

    Args:
        q_logits, p_logits: posterior and prior log-odds.
        temperature: shared relaxation temperature.
        sample: relaxed sample ``s`` drawn from ``q`` (or its logit if
            ``sample_is_logit``).
        prior_temperature: if given it must equal ``temperature``.
    """
    if temperature <= 0:
        raise DomainError("temperature must be positive")
    if prior_temperature is not None and prior_temperature != temperature:
        raise DomainError(f"temperatures differ: posterior {temperature}, prior {prior_temperature}")
    if sample_is_logit:
        y = sample
    else:
        s = torch.as_tensor(sample, dtype=q_logits.dtype).clamp(1e-15, 1.0 - 1e-15)
        y = torch.log(s) - torch.log1p(-s)
    q = q_logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    p = p_logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    ty = temperature * y
    return (_logistic_logpdf(ty - q) - _logistic_logpdf(ty - p)).sum()


def kl_dirichlet(alpha_q, alpha_p, dim=-1):
    """Closed-form ``KL(Dir(alpha_q) || Dir(alpha_p))``, Dirichlet along ``dim``, summed over the rest."""
    alpha_q = torch.as_tensor(alpha_q, dtype=torch.float64) if not torch.is_tensor(alpha_q) else alpha_q
    alpha_p = torch.as_tensor(alpha_p, dtype=alpha_q.dtype) if not torch.is_tensor(alpha_p) else alpha_p
    alpha_p = alpha_p.expand_as(alpha_q)
    if (alpha_q <= 0).any() or (alpha_p <= 0).any():
        raise DomainError("Dirichlet shapes must be positive")
    q0 = alpha_q.sum(dim, keepdim=True)
    p0 = alpha_p.sum(dim, keepdim=True)
    kl = (
        torch.lgamma(q0).squeeze(dim)
        - torch.lgamma(p0).squeeze(dim)
        - (torch.lgamma(alpha_q) - torch.lgamma(alpha_p)).sum(dim)
        + ((alpha_q - alpha_p) * (torch.digamma(alpha_q) - torch.digamma(q0))).sum(dim)
    )
    return kl.sum()


def _off_diagonal(n, dtype):
    return 1.0 - torch.eye(n, dtype=dtype)


def reconstruction_loss(P, A, pos_weight=1.0):
    """Weighted cross-entropy ``-sum_{i != j} [w a log P + (1 - a) log(1 - P)]``.

    ``P`` is clamped to ``[1e-7, 1 - 1e-7]`` before taking logs.
    """
    P = torch.as_tensor(P, dtype=torch.float64)
    A = torch.as_tensor(A, dtype=P.dtype)
    Pc = P.clamp(PROB_EPS, 1.0 - PROB_EPS)
    terms = pos_weight * A * torch.log(Pc) + (1.0 - A) * torch.log1p(-Pc)
    loss = -(terms * _off_diagonal(P.shape[0], P.dtype)).sum()
    if not torch.isfinite(loss):
        raise NumericError("reconstruction loss is not finite")
    return loss


def reconstruction_loss_logits(logits, A, pos_weight=1.0):
    """Same loss as :func:`reconstruction_loss` computed stably from log-odds."""
    terms = pos_weight * A * F.softplus(-logits) + (1.0 - A) * F.softplus(logits)
    return (terms * _off_diagonal(logits.shape[0], logits.dtype)).sum()


def default_pos_weight(n, m):
    """Class rebalancing ``(n(n-1) - m) / m``."""
    return (n * (n - 1) - m) / m


class DenseTarget:
    """Full ``n x n`` reconstruction target from the training edges."""

    def __init__(self, n, edges, pos_weight=None, dtype=torch.float64):
        self.n = n
        self.m = len(edges)
        self.A = torch.zeros(n, n, dtype=dtype)
        if self.m:
            e = torch.as_tensor(np.asarray(edges), dtype=torch.int64)
            self.A[e[:, 0], e[:, 1]] = 1.0
        self.pos_weight = default_pos_weight(n, self.m) if pos_weight is None else float(pos_weight)

    def loss(self, z, gamma, delta, beta, mode, undirected):
        return reconstruction_loss_logits(pairwise_logits(z, gamma, delta, beta, mode, undirected), self.A, self.pos_weight)


class SampledTarget:
    """Unbiased estimate over all positives and ``factor * m`` uniform non-edges.

    The negative-pair sum is rescaled by ``(n(n-1) - m) / (factor * m)``.
    """

    def __init__(self, n, edges, rng, factor=5, pos_weight=None):
        self.n = n
        self.edges = np.asarray(edges, dtype=np.int64)
        self.m = len(self.edges)
        self.codes = np.sort(self.edges[:, 0] * n + self.edges[:, 1])
        self.rng = rng
        self.k = int(factor * self.m)
        self.neg_scale = (n * (n - 1) - self.m) / self.k
        self.pos_weight = default_pos_weight(n, self.m) if pos_weight is None else float(pos_weight)

    def _negatives(self):
        out = np.empty((0,), dtype=np.int64)
        while out.size < self.k:
            i = self.rng.integers(0, self.n, size=self.k)
            j = self.rng.integers(0, self.n, size=self.k)
            c = i * self.n + j
            pos = np.searchsorted(self.codes, c).clip(max=self.m - 1)
            ok = (i != j) & (self.codes[pos] != c)
            out = np.concatenate([out, c[ok]])
        out = out[: self.k]
        return out // self.n, out % self.n

    def loss(self, z, gamma, delta, beta, mode, undirected):
        src, dst = self.edges[:, 0], self.edges[:, 1]
        pos = pair_logits(z, gamma, delta, beta, src, dst, mode, undirected)
        ns, nd = self._negatives()
        neg = pair_logits(z, gamma, delta, beta, ns, nd, mode, undirected)
        return self.pos_weight * F.softplus(-pos).sum() + self.neg_scale * F.softplus(neg).sum()


@dataclass
class LossBreakdown:
    """Per-layer KL terms, reconstruction term and total.

    ``total = kl_weight * (sum of all KL terms) + recon``; ``kl_weight`` is 1
    outside warm-up.
    """

    kl_z: list
    kl_s: list
    kl_gamma: list
    kl_delta: list
    recon: torch.Tensor
    total: torch.Tensor
    kl_weight: float = 1.0

    def kl_sum(self):
        return sum(sum(terms) for terms in (self.kl_z, self.kl_s, self.kl_gamma, self.kl_delta))

    def row(self):
        f = lambda terms: float(sum(float(t.detach()) for t in terms))
        return {
            "kl_z": f(self.kl_z),
            "kl_s": f(self.kl_s),
            "kl_gamma": f(self.kl_gamma),
            "kl_delta": f(self.kl_delta),
            "recon": float(self.recon.detach()),
            "total": float(self.total.detach()),
        }


def layer_kls(layer, temperature):
    """``(kl_z, kl_s, kl_gamma, kl_delta)`` for one stochastic layer."""
    post, prior = layer.post, layer.prior
    sigma_p = torch.sqrt(torch.as_tensor(prior["var"], dtype=post["mu"].dtype))
    kz = kl_normal(post["mu"], post["sigma"], prior["mu"], sigma_p.expand_as(post["sigma"]))
    ks = kl_concrete(post["pi"], prior["pi"], temperature, layer.s_logit, sample_is_logit=True)
    kg = kl_dirichlet(post["xi"], prior["xi"], dim=0)
    kd = kl_dirichlet(post["psi"], prior["psi"], dim=0) if post["psi"] is not None else torch.zeros((), dtype=kz.dtype)
    return kz, ks, kg, kd


def elbo_loss(output, target, beta, mode="distance", undirected=False, temperature=0.5, kl_weight=1.0):
    """Negative ELBO for one sampled forward pass.

    Args:
        output: :class:`~dlsm.decoder.DecoderOutput` of a sampling pass.
        target: :class:`DenseTarget` or :class:`SampledTarget`.
        beta: ``(b0, b_out, b_in)`` tensor.

    Raises:
        NumericError: a component is not finite; the message names it.
    """
    terms = {"kl_z": [], "kl_s": [], "kl_gamma": [], "kl_delta": []}
    for l, layer in enumerate(output.layers, start=1):
        for name, value in zip(terms, layer_kls(layer, temperature)):
            if not torch.isfinite(value):
                raise NumericError(f"{name} is not finite at layer {l}")
            terms[name].append(value)
    recon = target.loss(output.z, output.gamma, output.delta, beta, mode, undirected)
    if not torch.isfinite(recon):
        raise NumericError("reconstruction term is not finite")
    kl = sum(sum(v) for v in terms.values())
    return LossBreakdown(**terms, recon=recon, total=kl_weight * kl + recon, kl_weight=kl_weight)
