"""Convolutional generator and critic for P x P single-channel images."""
from __future__ import annotations

import math

import torch
from torch import nn


def _n_stages(image_size: int) -> int:
    n = int(round(math.log2(image_size))) - 2
    if image_size < 8 or 4 * 2 ** n != image_size:
        raise ValueError(f"image_size must be a power of two >= 8, got {image_size}")
    return n


class Generator(nn.Module):
    """z -> 4x4 feature map -> stride-2 transposed convs -> tanh image."""

    def __init__(self, z_dim: int, image_size: int, width: int = 32):
        super().__init__()
        n = _n_stages(image_size)
        chans = [width * 2 ** (n - 1 - i) for i in range(n)] + [1]
        self.z_dim = z_dim
        self.c0 = chans[0]
        self.project = nn.Linear(z_dim, chans[0] * 16)
        ups = []
        for i in range(n):
            ups.append(nn.ConvTranspose2d(chans[i], chans[i + 1], 4, stride=2, padding=1))
            if i < n - 1:
                ups.append(nn.ReLU())
        self.up = nn.Sequential(*ups)

    def forward(self, z):
        h = torch.relu(self.project(z)).view(z.shape[0], self.c0, 4, 4)
        return torch.tanh(self.up(h))


class Critic(nn.Module):
    """Stride-2 convs with LeakyReLU and a linear scalar head; no normalization layers."""

    def __init__(self, image_size: int, width: int = 32):
        super().__init__()
        n = _n_stages(image_size)
        chans = [1] + [width * 2 ** i for i in range(n)]
        body = []
        for i in range(n):
            body += [nn.Conv2d(chans[i], chans[i + 1], 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        self.body = nn.Sequential(*body)
        self.head = nn.Linear(chans[-1] * 16, 1)

    def forward(self, x):
        return self.head(self.body(x).flatten(1)).squeeze(1)


def build_networks(z_dim: int, image_size: int, width: int, seed: int) -> tuple[Generator, Critic]:
    """Both networks with PyTorch's default init, drawn from a private seeded stream."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        return Generator(z_dim, image_size, width), Critic(image_size, width)
