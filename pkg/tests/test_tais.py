import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mhkt.encoders import init_fan_in_uniform
from mhkt.tais import Bottleneck, kl_to_prior, reparameterize, tais_loss

from .helpers import assert_grad_matches_fd


def mc_kl(mu, sigma, n, rng):
    """Monte-Carlo E_q[log q(z) - log r(z)] with r the standard normal."""
    z = mu + sigma * rng.standard_normal((n, len(mu)))
    log_q = -0.5 * (((z - mu) / sigma) ** 2).sum(1) - np.log(sigma).sum() - 0.5 * len(mu) * math.log(2 * math.pi)
    log_r = -0.5 * (z**2).sum(1) - 0.5 * len(mu) * math.log(2 * math.pi)
    return float((log_q - log_r).mean())


class TestBottleneck:
    def test_zero_weights(self):
        b = Bottleneck(5, 4, 3).double()
        for p in b.parameters():
            torch.nn.init.zeros_(p)
        mu, sigma = b(torch.zeros(2, 5, dtype=torch.float64))
        assert torch.all(mu == 0)
        torch.testing.assert_close(sigma, torch.full((2, 3), math.log(2) + 1e-6, dtype=torch.float64))
        assert sigma[0, 0].item() == pytest.approx(0.6931, abs=1e-4)

    def test_sigma_positive_for_extreme_inputs(self):
        b = Bottleneck(4, 8, 3)
        init_fan_in_uniform(b, torch.Generator().manual_seed(0))
        _, sigma = b(torch.tensor([[-1e3, 1e3, -1e3, 1e3], [0.0, 0.0, 0.0, 0.0]]))
        assert torch.all(sigma > 0)

    def test_same_output_dim_for_both_domains(self):
        assert Bottleneck(128).z_dim == Bottleneck(3136).z_dim == 64

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Bottleneck(2, 2, 2)(torch.tensor([[float("inf"), 0.0]]))

    def test_gradient_check(self):
        b = Bottleneck(6, 5, 4).double()
        init_fan_in_uniform(b, torch.Generator().manual_seed(1))
        x = torch.randn(3, 6, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
        w = torch.randn(2, 3, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(3))

        def fn():
            mu, sigma = b(x)
            return (w[0] * mu).sum() + (w[1] * sigma).sum()

        assert_grad_matches_fd(fn, list(b.parameters()))


class TestReparameterize:
    def test_zero_noise(self):
        mu, sigma = torch.tensor([1.0, -2.0]), torch.tensor([0.5, 3.0])
        assert torch.equal(reparameterize(mu, sigma, torch.zeros(2)), mu)

    def test_identity(self):
        e = torch.tensor([0.3, -1.2, 2.0])
        assert torch.equal(reparameterize(torch.zeros(3), torch.ones(3), e), e)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            reparameterize(torch.zeros(3), torch.ones(2), torch.zeros(3))

    def test_monte_carlo_mean(self):
        gen = torch.Generator().manual_seed(0)
        mu = torch.tensor([1.5, -0.5, 0.0], dtype=torch.float64)
        sigma = torch.tensor([0.5, 2.0, 1.0], dtype=torch.float64)
        n = 100_000
        z = reparameterize(mu.expand(n, 3), sigma.expand(n, 3), torch.randn(n, 3, generator=gen, dtype=torch.float64))
        se = sigma / math.sqrt(n)
        assert torch.all((z.mean(0) - mu).abs() < 3 * se)


class TestKL:
    def test_prior_is_zero(self):
        assert float(kl_to_prior(torch.zeros(4), torch.ones(4))) == 0.0

    def test_unit_mean(self):
        assert float(kl_to_prior(torch.tensor([1.0]), torch.tensor([1.0]))) == pytest.approx(0.5)

    def test_sigma_two_against_monte_carlo(self):
        closed = float(kl_to_prior(torch.tensor([0.0], dtype=torch.float64), torch.tensor([2.0], dtype=torch.float64)))
        assert closed == pytest.approx(1.5 - math.log(2), abs=1e-12)
        mc = mc_kl(np.array([0.0]), np.array([2.0]), 100_000, np.random.default_rng(0))
        assert abs(mc - closed) / closed < 0.01

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            kl_to_prior(torch.zeros(2), torch.tensor([1.0, 0.0]))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(1e-3, 10)), min_size=1, max_size=8))
    def test_nonnegative(self, pairs):
        mu = torch.tensor([p[0] for p in pairs], dtype=torch.float64)
        sigma = torch.tensor([p[1] for p in pairs], dtype=torch.float64)
        assert float(kl_to_prior(mu, sigma)) >= -1e-12

    def test_batched_sum_over_last_axis(self):
        mu = torch.tensor([[0.0, 1.0], [1.0, 1.0]])
        assert kl_to_prior(mu, torch.ones(2, 2)).tolist() == [0.5, 1.0]


class TestTaisLoss:
    def test_beta_zero_is_cross_entropy(self):
        logits = torch.tensor([[2.0, 0.1, -1.0], [0.0, 0.5, 0.2]])
        y = torch.tensor([0, 2])
        ce = torch.nn.functional.cross_entropy(logits, y)
        mu, sigma = torch.randn(2, 4), torch.rand(2, 4) + 0.1
        torch.testing.assert_close(tais_loss(logits, y, mu, sigma, 0.0), ce)

    def test_uniform_logits(self):
        loss = tais_loss(torch.zeros(5, 3), torch.tensor([0, 1, 2, 0, 1]), torch.zeros(5, 2), torch.ones(5, 2), 0.0)
        assert float(loss) == pytest.approx(math.log(3), abs=1e-6)

    def test_zero_kl_at_prior(self):
        logits = torch.tensor([[1.0, -1.0, 0.0]])
        y = torch.tensor([1])
        ce = torch.nn.functional.cross_entropy(logits, y)
        torch.testing.assert_close(tais_loss(logits, y, torch.zeros(1, 4), torch.ones(1, 4), 1.0), ce)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            tais_loss(torch.zeros(1, 3), torch.tensor([3]), torch.zeros(1, 2), torch.ones(1, 2), 0.1)

    def test_gradient_check(self):
        torch.manual_seed(0)
        b = Bottleneck(5, 6, 3).double()
        init_fan_in_uniform(b, torch.Generator().manual_seed(0))
        head = torch.nn.Linear(3, 3).double()
        params = list(b.parameters()) + list(head.parameters())
        assert sum(p.numel() for p in params) <= 200
        x = torch.randn(4, 5, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
        eps = torch.randn(4, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
        y = torch.tensor([0, 1, 2, 1])

        def fn():
            mu, sigma = b(x)
            return tais_loss(head(reparameterize(mu, sigma, eps)), y, mu, sigma, 0.3)

        assert_grad_matches_fd(fn, params)

    def test_loss_decreases_on_separable_toy(self):
        passes = 0
        for seed in range(5):
            g = torch.Generator().manual_seed(seed)
            x = torch.cat([torch.randn(30, 4, generator=g) + 2, torch.randn(30, 4, generator=g) - 2])
            y = torch.tensor([0] * 30 + [1] * 30)
            b, head = Bottleneck(4, 8, 2), torch.nn.Linear(2, 2)
            init_fan_in_uniform(b, g)
            opt = torch.optim.Adam(list(b.parameters()) + list(head.parameters()), lr=1e-2)
            losses = []
            for _ in range(50):
                mu, sigma = b(x)
                z = reparameterize(mu, sigma, torch.randn(mu.shape, generator=g))
                loss = tais_loss(head(z), y, mu, sigma, 1e-3)
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(loss.item())
            passes += np.mean(losses[-10:]) < np.mean(losses[:10])
        assert passes >= 3
