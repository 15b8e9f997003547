import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats
from scipy.special import digamma

from dlsm.decoder import DecoderOutput, LayerLatents
from dlsm.errors import DomainError
from dlsm.objective import (
    DenseTarget,
    SampledTarget,
    default_pos_weight,
    elbo_loss,
    kl_concrete,
    kl_dirichlet,
    kl_normal,
    reconstruction_loss,
    reconstruction_loss_logits,
)
from dlsm.samplers import binary_concrete_logit, stick_breaking_logits

from conftest import fd_gradient_errors, toy_loss_closure

T = lambda x: torch.as_tensor(x, dtype=torch.float64)


def concrete_kl_quadrature(a, b, lam):
    """KL between the logit-space laws Logistic(a/lam, 1/lam) and Logistic(b/lam, 1/lam)."""
    q = stats.logistic(loc=a / lam, scale=1 / lam)
    p = stats.logistic(loc=b / lam, scale=1 / lam)
    f = lambda y: q.pdf(y) * (q.logpdf(y) - p.logpdf(y))
    return integrate.quad(f, -np.inf, np.inf, epsabs=1e-12)[0]


class TestKLNormal:
    def test_unit_shift(self):
        assert abs(kl_normal(T([1.0]), T([1.0]), T([0.0]), T([1.0])).item() - 0.5) <= 1e-12

    def test_identical(self):
        assert kl_normal(T([0.3, -2]), T([0.5, 2]), T([0.3, -2]), T([0.5, 2])).item() == 0.0

    def test_nonnegative_against_torch(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            mq, mp = rng.normal(size=2) * 3
            sq, sp = rng.uniform(0.01, 5, 2)
            got = kl_normal(T([mq]), T([sq]), T([mp]), T([sp])).item()
            want = torch.distributions.kl_divergence(torch.distributions.Normal(T(mq), T(sq)), torch.distributions.Normal(T(mp), T(sp))).item()
            assert got >= 0
            assert got == pytest.approx(want, rel=1e-10, abs=1e-12)

    def test_bad_scale(self):
        with pytest.raises(DomainError):
            kl_normal(T([0.0]), T([0.0]), T([0.0]), T([1.0]))


class TestKLDirichlet:
    def test_closed_form_example(self):
        got = kl_dirichlet(T([2.0, 1.0]), T([1.0, 1.0])).item()
        assert round(got, 5) == 0.19315
        assert got == pytest.approx(math.log(2) + digamma(2) - digamma(3), abs=1e-14)

    def test_identical(self):
        assert kl_dirichlet(T([0.4, 3.0, 2.0]), T([0.4, 3.0, 2.0])).item() == 0.0

    def test_random_draws_nonnegative_and_match_torch(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            k = rng.integers(2, 6)
            aq, ap = rng.uniform(0.05, 10, (2, k))
            got = kl_dirichlet(T(aq), T(ap)).item()
            want = torch.distributions.kl_divergence(torch.distributions.Dirichlet(T(aq)), torch.distributions.Dirichlet(T(ap))).item()
            assert got >= 0
            assert got == pytest.approx(want, rel=1e-9, abs=1e-12)

    def test_axis_and_sum(self):
        aq = T([[2.0, 1.0], [1.0, 3.0], [0.5, 0.5]])
        ap = T(np.ones((3, 2)))
        cols = sum(kl_dirichlet(aq[:, j], ap[:, j]).item() for j in range(2))
        assert kl_dirichlet(aq, ap, dim=0).item() == pytest.approx(cols, rel=1e-14)

    def test_bad_shape(self):
        with pytest.raises(DomainError):
            kl_dirichlet(T([0.0, 1.0]), T([1.0, 1.0]))


class TestKLConcrete:
    def test_identical_is_zero(self):
        y = binary_concrete_logit(T([0.4, -1.0]), 0.5, T([0.3, 0.8]))
        assert kl_concrete(T([0.4, -1.0]), T([0.4, -1.0]), 0.5, y, sample_is_logit=True).item() == 0.0

    @pytest.mark.parametrize("a,b,lam", [(1.5, -0.5, 0.5), (0.0, -2.2, 1.0), (-1.0, 2.0, 0.3)])
    def test_unbiased_against_quadrature(self, a, b, lam):
        u = T(np.random.default_rng(5).random(100_000))
        qa = T(np.full(u.shape, a))
        y = binary_concrete_logit(qa, lam, u)
        est = kl_concrete(qa, T(np.full(u.shape, b)), lam, y, sample_is_logit=True).item() / u.shape[0]
        assert est == pytest.approx(concrete_kl_quadrature(a, b, lam), rel=0.01)

    def test_relaxed_sample_input(self):
        y = binary_concrete_logit(T([0.7]), 0.5, T([0.2]))
        a = kl_concrete(T([0.7]), T([-1.0]), 0.5, torch.sigmoid(y))
        b = kl_concrete(T([0.7]), T([-1.0]), 0.5, y, sample_is_logit=True)
        assert a.item() == pytest.approx(b.item(), rel=1e-9)

    def test_temperature_mismatch(self):
        with pytest.raises(DomainError):
            kl_concrete(T([0.0]), T([0.0]), 0.5, T([0.5]), prior_temperature=1.0)

    def test_long_run_mean_nonnegative(self):
        rng = np.random.default_rng(9)
        u = T(rng.random(50_000))
        for a, b in rng.normal(size=(10, 2)) * 3:
            qa = T(np.full(u.shape, a))
            y = binary_concrete_logit(qa, 0.5, u)
            assert kl_concrete(qa, T(np.full(u.shape, b)), 0.5, y, sample_is_logit=True).item() >= 0


class TestReconstruction:
    def test_half_everywhere(self):
        n = 5
        A = np.zeros((n, n))
        A[0, 1] = A[2, 3] = 1
        assert reconstruction_loss(T(np.full((n, n), 0.5)), T(A), 1.0).item() == pytest.approx(n * (n - 1) * math.log(2), rel=1e-14)

    def test_perfect(self):
        A = T([[0, 1, 0], [0, 0, 1], [1, 0, 0]])
        assert reconstruction_loss(A, A, 3.0).item() < 1e-5

    def test_empty_graph(self):
        assert reconstruction_loss(T(np.zeros((4, 4))), T(np.zeros((4, 4))), 1.0).item() < 1e-5

    def test_bernoulli_oracle(self):
        P = np.array([[0.0, 0.8], [0.3, 0.0]])
        A = np.array([[0, 1], [0, 0]])
        w = 2.5
        want = -(w * math.log(0.8) + math.log(1 - 0.3))
        assert reconstruction_loss(T(P), T(A), w).item() == pytest.approx(want, rel=1e-14)

    @given(st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_logit_form_matches(self, seed):
        rng = np.random.default_rng(seed)
        logits = T(rng.normal(size=(6, 6)) * 3)
        A = T((rng.random((6, 6)) < 0.3).astype(float))
        a = reconstruction_loss(torch.sigmoid(logits), A, 4.0).item()
        b = reconstruction_loss_logits(logits, A, 4.0).item()
        assert a == pytest.approx(b, rel=1e-9)

    def test_pos_weight(self):
        assert default_pos_weight(4, 3) == 3.0

    def test_sampled_target_unbiased(self):
        rng = np.random.default_rng(0)
        n = 40
        edges = np.unique(rng.integers(0, n, (80, 2)), axis=0)
        edges = edges[edges[:, 0] != edges[:, 1]]
        z, gamma, delta = T(rng.normal(size=(n, 2))), T(rng.uniform(0.5, 2, (n, 2))), T(rng.uniform(0.5, 2, (n, 2)))
        beta = T([0.5, 1.0, 1.0])
        dense = DenseTarget(n, edges).loss(z, gamma, delta, beta, "distance", False).item()
        sampled = SampledTarget(n, edges, np.random.default_rng(1), factor=5)
        est = np.mean([sampled.loss(z, gamma, delta, beta, "distance", False).item() for _ in range(400)])
        assert est == pytest.approx(dense, rel=0.02)


def pinned_output(n, sizes, latent_dim):
    layers = []
    for G in sizes:
        pi = stick_breaking_logits(0.9, G).expand(n, -1)
        post = {"mu": T(np.zeros((n, G))), "sigma": T(np.ones((n, G))), "pi": pi, "xi": T(np.ones((n, G))), "psi": T(np.ones((n, G)))}
        prior = {"mu": T(np.zeros((n, G))), "var": 1.0, "pi": pi, "xi": T(np.ones((n, G))), "psi": T(np.ones((n, G)))}
        y = binary_concrete_logit(pi, 0.5, T(np.full((n, G), 0.3)))
        layers.append(LayerLatents(T(np.zeros((n, G))), torch.sigmoid(y), T(np.ones((n, G))), T(np.ones((n, G))), post, prior, y))
    z = T(np.zeros((n, latent_dim)))
    return DecoderOutput(layers, z, T(np.ones((n, latent_dim))), T(np.ones((n, latent_dim))))


class TestElbo:
    def test_pinned_posteriors_leave_recon(self):
        n, edges = 4, [(0, 1), (1, 2)]
        target = DenseTarget(n, edges)
        loss = elbo_loss(pinned_output(n, (2, 3), 2), target, T([0.0, 1.0, 1.0]))
        w = target.pos_weight
        want = (w * 2 + (n * (n - 1) - 2)) * math.log(2)
        assert loss.kl_sum().item() == 0.0
        assert loss.total.item() == pytest.approx(want, rel=1e-14)

    def test_parts_sum_to_total(self, trained):
        g, _, split, model = trained
        from dlsm.encoder import normalize_adjacency, to_torch_sparse
        from dlsm.rng import substream
        from dlsm.trainer import restore_modules

        enc, dec = restore_modules(model)
        adj = to_torch_sparse(normalize_adjacency(g.with_edges(split.train_pos)))
        out = dec(enc(adj), dec.draw_noise(g.n, substream(0, "x")))
        loss = elbo_loss(out, DenseTarget(g.n, split.train_pos), dec.beta, kl_weight=0.3)
        r = loss.row()
        assert 0.3 * (r["kl_z"] + r["kl_s"] + r["kl_gamma"] + r["kl_delta"]) + r["recon"] == pytest.approx(r["total"], rel=1e-12)
        assert min(r["kl_z"], r["kl_gamma"], r["kl_delta"]) >= 0


class TestGradients:
    @pytest.mark.parametrize("mode", ["distance", "inner_product"])
    def test_finite_differences(self, mode):
        params, loss_fn = toy_loss_closure(0, mode)
        errors = fd_gradient_errors(params, loss_fn)
        assert max(errors.values()) <= 1e-4, errors

    def test_undirected_finite_differences(self):
        params, loss_fn = toy_loss_closure(1, "distance", undirected=True)
        assert max(fd_gradient_errors(params, loss_fn).values()) <= 1e-4

    def test_toy_loss_decreases(self):
        params, loss_fn = toy_loss_closure(2)
        opt = torch.optim.Adam(params.values(), lr=0.01)
        losses = []
        for _ in range(200):
            opt.zero_grad()
            loss = loss_fn()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        ma = np.convolve(losses, np.ones(20) / 20, mode="valid")
        assert ma[-1] < ma[0]
        assert losses[-1] < losses[0]
