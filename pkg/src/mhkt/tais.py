"""Task-associated information selector: a per-domain variational bottleneck."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

SIGMA_FLOOR = 1e-6


class Bottleneck(nn.Module):
    """Shared hidden layer feeding a mean head and a softplus scale head."""

    def __init__(self, in_dim: int, hidden: int = 256, z_dim: int = 64):
        super().__init__()
        self.hidden = nn.Linear(in_dim, hidden)
        self.mu_head = nn.Linear(hidden, z_dim)
        self.sigma_head = nn.Linear(hidden, z_dim)
        self.z_dim = z_dim

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if not torch.isfinite(x).all():
            raise ValueError("bottleneck input contains non-finite values")
        h = torch.relu(self.hidden(x))
        return self.mu_head(h), F.softplus(self.sigma_head(h)) + SIGMA_FLOOR

    def mean(self, x: torch.Tensor) -> torch.Tensor:
        """Mean head only; the path used when the selector is switched off."""
        return self.mu_head(torch.relu(self.hidden(x)))


def reparameterize(mu: torch.Tensor, sigma: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    if mu.shape != sigma.shape or mu.shape != eps.shape:
        raise ValueError(f"shape mismatch: mu {tuple(mu.shape)}, sigma {tuple(sigma.shape)}, eps {tuple(eps.shape)}")
    return mu + sigma * eps


def kl_to_prior(mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """KL of N(mu, diag(sigma^2)) from the standard normal, summed over the last axis."""
    mu = torch.as_tensor(mu)
    sigma = torch.as_tensor(sigma, dtype=mu.dtype)
    if (sigma <= 0).any():
        raise ValueError("sigma must be strictly positive")
    return (0.5 * (sigma**2 + mu**2 - 1.0) - torch.log(sigma)).sum(dim=-1)


def tais_loss(logits: torch.Tensor, labels: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor, beta: float) -> torch.Tensor:
    """Batch mean of ``CE(logits, y) + beta * KL(q(z|x) || N(0, I))``.

    ``logits`` must come from one reparameterized draw of ``z`` per sample.
    """
    labels = torch.as_tensor(labels, dtype=torch.long)
    K = logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels out of range [0, {K})")
    ce = F.cross_entropy(logits, labels, reduction="none")
    return (ce + beta * kl_to_prior(mu, sigma)).mean()
