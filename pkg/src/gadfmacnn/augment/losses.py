"""WGAN-GP objective pieces.

The critic minimizes ``mean D(fake) - mean D(real) + lambda * mean (||grad D(x_hat)|| - 1)^2``
where ``x_hat`` lies on the segment between a real and a fake sample. The
generator minimizes ``-mean D(G(z))``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import torch

from ..errors import NonFiniteGradient, ShapeMismatch


@dataclass
class LatentBatch:
    vectors: torch.Tensor
    seed: int

    def __len__(self):
        return self.vectors.shape[0]


def torch_generator(*seed_parts: int) -> torch.Generator:
    """A CPU generator seeded from a tuple of ints via SeedSequence."""
    s = int(np.random.SeedSequence([int(p) for p in seed_parts]).generate_state(1)[0])
    return torch.Generator().manual_seed(s)


def sample_latent(n: int, z_dim: int, seed: int | torch.Generator, dtype=torch.float32) -> LatentBatch:
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = seed if isinstance(seed, torch.Generator) else torch_generator(seed)
    z = torch.randn((n, z_dim), generator=gen, dtype=dtype)
    return LatentBatch(z, seed if isinstance(seed, int) else -1)


def interpolate_samples(real: torch.Tensor, fake: torch.Tensor, seed=None,
                        eps: torch.Tensor | float | None = None) -> torch.Tensor:
    """x_hat = eps * real + (1 - eps) * fake with one eps ~ U(0, 1) per sample."""
    if real.shape != fake.shape:
        raise ShapeMismatch(f"real {tuple(real.shape)} vs fake {tuple(fake.shape)}")
    if eps is None:
        gen = seed if isinstance(seed, torch.Generator) else torch_generator(0 if seed is None else seed)
        eps = torch.rand((real.shape[0],), generator=gen, dtype=real.dtype)
    eps = torch.as_tensor(eps, dtype=real.dtype)
    if eps.dim() == 1:
        eps = eps.view((-1,) + (1,) * (real.dim() - 1))
    return eps * real + (1 - eps) * fake


def input_gradients(critic: Callable, x: torch.Tensor, create_graph: bool = True) -> torch.Tensor:
    """d critic(x)_i / d x_i per sample, flattened to (N, -1)."""
    x = x.detach().requires_grad_(True)
    out = critic(x)
    if not out.requires_grad:
        return torch.zeros(x.shape[0], x[0].numel(), dtype=x.dtype)
    (grad,) = torch.autograd.grad(out.sum(), x, create_graph=create_graph, allow_unused=True)
    if grad is None:
        return torch.zeros(x.shape[0], x[0].numel(), dtype=x.dtype)
    return grad.reshape(x.shape[0], -1)


def gradient_norms(critic: Callable, x: torch.Tensor) -> torch.Tensor:
    return input_gradients(critic, x, create_graph=False).norm(2, dim=1).detach()


def gradient_penalty(critic: Callable, interpolated: torch.Tensor, lambda_gp: float) -> torch.Tensor:
    grad = input_gradients(critic, interpolated)
    if not torch.isfinite(grad).all():
        raise NonFiniteGradient("critic input-gradient is not finite")
    return lambda_gp * ((grad.norm(2, dim=1) - 1.0) ** 2).mean()


class CriticTerms(NamedTuple):
    loss: torch.Tensor
    fake_score: torch.Tensor
    real_score: torch.Tensor
    penalty: torch.Tensor

    @property
    def wasserstein(self) -> float:
        return float((self.real_score - self.fake_score).detach())


def critic_loss(critic, generator, real: torch.Tensor, latent: LatentBatch | torch.Tensor,
                lambda_gp: float, seed=None, eps=None) -> CriticTerms:
    z = latent.vectors if isinstance(latent, LatentBatch) else latent
    with torch.no_grad():
        fake = generator(z)
    fake_score = critic(fake).mean()
    real_score = critic(real).mean()
    x_hat = interpolate_samples(real, fake, seed=seed, eps=eps)
    gp = gradient_penalty(critic, x_hat, lambda_gp)
    return CriticTerms(fake_score - real_score + gp, fake_score, real_score, gp)


def generator_loss(critic, generator, latent: LatentBatch | torch.Tensor) -> torch.Tensor:
    z = latent.vectors if isinstance(latent, LatentBatch) else latent
    return -critic(generator(z)).mean()
