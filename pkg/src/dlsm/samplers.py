"""Reparameterised samplers for latent positions, memberships and node random factors.

All samplers take their noise explicitly so that a forward pass is a
deterministic, differentiable function of the parameters once the noise is
fixed (common random numbers).
"""

import numpy as np
import torch
from scipy.special import digamma, gammainc, gammaincinv

from .errors import DomainError

LOGIT_CLAMP = 15.0
# keeps logit(u) and Gamma inverse-CDF draws finite
NOISE_EPS = 1e-12


def stick_breaking_logits(v, G, dtype=torch.float64):
    """Log-odds ``logit(v**g)`` for ``g = 1..G`` under a global stick parameter.

    Evaluated as ``g log v - log1p(-v**g)`` so the sequence stays strictly
    decreasing even where ``v**g`` underflows a naive ``logit``. Consumers
    clamp to ``+-LOGIT_CLAMP`` before exponentiating.
    """
    if not 0.0 < v < 1.0:
        raise DomainError(f"stick parameter v must lie in (0, 1), got {v}")
    g = torch.arange(1, int(G) + 1, dtype=dtype)
    log_v = float(np.log(v))
    return g * log_v - torch.log1p(-torch.exp(g * log_v))


def _clamp_noise(u):
    return u.clamp(NOISE_EPS, 1.0 - NOISE_EPS)


def logit(u):
    return torch.log(u) - torch.log1p(-u)


def binary_concrete_logit(logits, temperature, u):
    """Pre-sigmoid Binary Concrete sample ``(clamp(logits) + logit(u)) / temperature``."""
    if temperature <= 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    u = _clamp_noise(torch.as_tensor(u, dtype=logits.dtype))
    return (logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP) + logit(u)) / temperature


def sample_binary_concrete(logits, temperature, u):
    """Relaxed Bernoulli membership ``sigmoid((logits + logit(u)) / temperature)`` in (0, 1)."""
    return torch.sigmoid(binary_concrete_logit(logits, temperature, u))


def sample_normal_positions(mu, sigma, eps):
    return mu + sigma * eps


def gamma_shape_derivative(a, x, tol=1e-16, max_terms=5000):
    """Implicit reparameterisation derivative ``dx/da`` of a unit-rate Gamma draw.

    For ``x = F^{-1}(u; a)`` with ``u`` held fixed, ``dx/da = -(dF/da) / p(x; a)``.
    Writing the lower regularised incomplete gamma as a power series,

        dx/da = -(x / a) * sum_k r_k (log x - digamma(a + 1) - H_k),
        r_k = x^k / ((a+1)...(a+k)),   H_k = sum_{j<=k} 1 / (a + j),

    which needs no special functions inside the loop. Large ``x`` (where the
    terms overflow) falls back to a five-point difference of the inverse CDF.
    """
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    a, x = np.broadcast_arrays(a, x)
    a = a.ravel()
    x = x.ravel()
    out = np.zeros_like(x)
    big = x > 400.0
    series = (x > 0) & ~big
    idx = np.flatnonzero(series)
    if idx.size:
        aa, xx = a[idx], x[idx]
        c = np.log(xx) - digamma(aa + 1.0)
        r = np.ones_like(xx)
        H = np.zeros_like(xx)
        S = c.copy()
        live = np.arange(idx.size)
        for k in range(1, max_terms):
            ak = aa[live] + k
            r[live] *= xx[live] / ak
            H[live] += 1.0 / ak
            term = r[live] * (c[live] - H[live])
            S[live] += term
            done = (np.abs(term) <= tol * np.abs(S[live])) & (k > xx[live])
            live = live[~done]
            if live.size == 0:
                break
        out[idx] = -(xx / aa) * S
    if big.any():
        ab = a[big]
        ub = gammainc(ab, x[big])
        h = 1e-4 * ab
        f = lambda d: gammaincinv(ab + d, ub)
        out[big] = (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)
    return out


class _GammaInverseCDF(torch.autograd.Function):
    @staticmethod
    def forward(ctx, shape, u):
        a = shape.detach().cpu().numpy()
        # tiny shapes underflow to 0; keep draws strictly positive
        x = np.maximum(gammaincinv(a, u.detach().cpu().numpy()), np.finfo(a.dtype).tiny)
        out = torch.as_tensor(x, dtype=shape.dtype)
        ctx.save_for_backward(shape, out)
        return out

    @staticmethod
    def backward(ctx, grad):
        shape, x = ctx.saved_tensors
        d = gamma_shape_derivative(shape.detach().numpy(), x.detach().numpy()).reshape(x.shape)
        return grad * torch.as_tensor(d, dtype=grad.dtype), None


def sample_gamma(shape, u):
    """Unit-rate Gamma draw ``F^{-1}(u; shape)``, pathwise differentiable in ``shape``."""
    if not torch.all(shape > 0):
        raise DomainError("Gamma shape must be positive")
    u = _clamp_noise(torch.as_tensor(u, dtype=shape.dtype))
    return _GammaInverseCDF.apply(shape, u)


def normalize_factors(g):
    """Scale columns of positive ``g`` (nodes x dims) to sum to the node count."""
    g = torch.as_tensor(g)
    if g.dim() == 1:
        g = g[:, None]
        return (g.shape[0] * g / g.sum(dim=0, keepdim=True))[:, 0]
    return g.shape[0] * g / g.sum(dim=0, keepdim=True)


def sample_dirichlet_factors(shape, u):
    """Node random factors from normalised Gammas.

    Each column of ``shape`` (one row per node) parameterises a Dirichlet over
    the nodes; the sample is magnified by ``n`` so that every column sums to
    ``n`` and a typical factor is of order one.

    Args:
        shape: positive ``(n, G)`` (or ``(n,)``) Gamma shapes.
        u: uniform noise of the same shape.
    """
    return normalize_factors(sample_gamma(shape, u))


def dirichlet_factor_mean(shape):
    """Posterior-mean factors ``n * shape / column sum``."""
    return normalize_factors(shape)
