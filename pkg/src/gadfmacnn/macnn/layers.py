"""Functional building blocks of the multi-scale attention CNN.

Every op accepts 1-D feature maps (N, C, L) or 2-D maps (N, C, H, W); the
kernel/weight rank decides which.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from ..errors import BadKernel, BadReduction, ShapeMismatch


def _spatial_dims(x: torch.Tensor) -> tuple[int, ...]:
    return tuple(range(2, x.dim()))


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """(before, after) padding so that output length is ceil(size / stride)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv_forward(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None,
                 stride: int = 1) -> torch.Tensor:
    """Cross-correlation with same padding plus a per-output-channel bias."""
    nd = weight.dim() - 2
    if nd not in (1, 2) or x.dim() != nd + 2:
        raise ShapeMismatch(f"input of rank {x.dim()} vs weight of rank {weight.dim()}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    pads = []
    for size, k in zip(reversed(x.shape[2:]), reversed(weight.shape[2:])):
        pads.extend(same_padding(size, k, stride))
    x = F.pad(x, pads)
    if nd == 1:
        return F.conv1d(x, weight, bias, stride=stride)
    return F.conv2d(x, weight, bias, stride=stride)


def max_pool(x: torch.Tensor, window: int, stride: int | None = None) -> torch.Tensor:
    stride = window if stride is None else stride
    spatial = x.shape[2:]
    if any(window > s for s in spatial):
        raise ShapeMismatch(f"pool window {window} larger than feature map {tuple(spatial)}")
    if x.dim() == 3:
        return F.max_pool1d(x, window, stride)
    if x.dim() == 4:
        return F.max_pool2d(x, window, stride)
    raise ShapeMismatch(f"cannot pool a rank-{x.dim()} tensor")


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.clamp_min(x, 0.0)


def instance_norm(x: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor,
                  eps: float = 1e-5) -> torch.Tensor:
    """Standardize each (sample, channel) over its spatial positions, then scale and shift."""
    dims = _spatial_dims(x)
    mean = x.mean(dim=dims, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=dims, keepdim=True)
    xhat = (x - mean) / torch.sqrt(var + eps)
    view = (1, -1) + (1,) * len(dims)
    return scale.view(view) * xhat + shift.view(view)


def squeeze(x: torch.Tensor) -> torch.Tensor:
    """Global average pool to one scalar per (sample, channel)."""
    return x.mean(dim=_spatial_dims(x))


def dense(x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """x @ w.T evaluated row by row.

    BLAS picks different kernels (and summation orders) for different batch
    sizes; a broadcast multiply-and-sum keeps each sample's result independent
    of the batch it arrives in.
    """
    return (x.unsqueeze(-2) * w).sum(-1)


def se_weights(z: torch.Tensor, w1: torch.Tensor, w2: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(dense(relu(dense(z, w1)), w2))


def se_block(u: torch.Tensor, w1: torch.Tensor, w2: torch.Tensor, reduction: int) -> torch.Tensor:
    c = u.shape[1]
    if reduction < 1 or c % reduction:
        raise BadReduction(f"{c} channels not divisible by reduction {reduction}")
    if tuple(w1.shape) != (c // reduction, c) or tuple(w2.shape) != (c, c // reduction):
        raise BadReduction(f"SE weights {tuple(w1.shape)}, {tuple(w2.shape)} do not fit C={c}, r={reduction}")
    s = se_weights(squeeze(u), w1, w2)
    return u * s.view(s.shape + (1,) * (u.dim() - 2))


def eca_kernel_size(channels: int, gamma: float = 2.0, b: float = 1.0) -> int:
    """Adaptive ECA kernel width, forced odd (even values round up)."""
    if channels < 2:
        raise ValueError("need at least 2 channels")
    k = math.floor(math.log2(channels) / gamma + b / gamma)
    if k % 2 == 0:
        k += 1
    return max(k, 1)


def eca_apply(descriptor: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | float = 0.0) -> torch.Tensor:
    """Channel weights from a width-k 1-D convolution across the channel descriptor.

    ``descriptor`` is (N, C); the result is sigmoid(conv) with zero padding so
    the weight vector keeps length C.
    """
    k = weight.numel()
    c = descriptor.shape[-1]
    if k % 2 == 0 or k > c:
        raise BadKernel(f"ECA kernel {k} must be odd and <= {c} channels")
    y = F.conv1d(descriptor.unsqueeze(1), weight.view(1, 1, k), padding=k // 2).squeeze(1)
    return torch.sigmoid(y + bias)


def softmax(logits: torch.Tensor, dim: int = -1) -> torch.Tensor:
    z = logits - logits.max(dim=dim, keepdim=True).values
    e = torch.exp(z)
    return e / e.sum(dim=dim, keepdim=True)
