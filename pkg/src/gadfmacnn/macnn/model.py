"""Multi-scale attention CNN (MACNN).

Layer plan (2-D image mode, defaults)::

    wide block   conv 7x7/2, 32 filters -> IN -> ReLU -> maxpool 2/2
    3 branches   for k in (5, 7, 9):
                   conv kxk/1, 64 -> ReLU -> maxpool 2/2 -> SE
                   conv kxk/1, 128 -> ReLU -> maxpool 2/2 -> SE
    fusion       concat branches (384 ch) -> ECA
    head         global average pool -> fully connected -> logits

In ``1d_signal`` mode the same plan runs on raw windows with k x 1 kernels
and the literal 64-tap wide kernel.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from ..errors import BadReduction, NonFiniteActivation, ShapeMismatch
from . import layers as L


@dataclass(frozen=True)
class MacnnConfig:
    input_size: int = 64
    in_channels: int = 1
    wide_kernel: int = 7
    wide_stride: int = 2
    wide_filters: int = 32
    branch_kernels: tuple[int, int, int] = (5, 7, 9)
    stage_filters: tuple[int, int] = (64, 128)
    se_reduction: int = 16
    eca_gamma: float = 2.0
    eca_b: float = 1.0
    num_classes: int = 5
    dims: str = "2d_image"
    in_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "branch_kernels", tuple(int(k) for k in self.branch_kernels))
        object.__setattr__(self, "stage_filters", tuple(int(f) for f in self.stage_filters))
        ks = self.branch_kernels
        if any(k % 2 == 0 for k in ks) or len(set(ks)) != len(ks):
            raise ValueError(f"branch kernels must be odd and distinct, got {ks}")
        for c in self.stage_filters:
            if c % self.se_reduction:
                raise BadReduction(f"SE reduction {self.se_reduction} does not divide {c}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.dims not in ("2d_image", "1d_signal"):
            raise ValueError("dims must be '2d_image' or '1d_signal'")
        if self.min_input_size() > self.input_size:
            raise ShapeMismatch(f"input_size {self.input_size} too small for the stride plan")

    @property
    def nd(self) -> int:
        return 2 if self.dims == "2d_image" else 1

    @property
    def fused_channels(self) -> int:
        return len(self.branch_kernels) * self.stage_filters[-1]

    @property
    def eca_kernel(self) -> int:
        return L.eca_kernel_size(self.fused_channels, self.eca_gamma, self.eca_b)

    def min_input_size(self) -> int:
        # stride plan: wide conv, pool, then one pool per stage; the last map must be >= 1
        return self.wide_stride * 2 * 2 ** len(self.stage_filters)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MacnnConfig":
        return cls(**d)


def _kernel_shape(cfg: MacnnConfig, k: int) -> tuple[int, ...]:
    return (k,) * cfg.nd


def _fan_in_init(shape, fan_in: int, gain: float, gen: torch.Generator) -> torch.Tensor:
    return torch.randn(shape, generator=gen) * (gain / math.sqrt(fan_in))


class WideBlock(nn.Module):
    """MaxPool(ReLU(IN(conv(x)))) with a wide, strided first kernel."""

    def __init__(self, cfg: MacnnConfig, gen: torch.Generator):
        super().__init__()
        k = cfg.wide_kernel
        shape = (cfg.wide_filters, cfg.in_channels) + _kernel_shape(cfg, k)
        fan_in = cfg.in_channels * k ** cfg.nd
        self.weight = nn.Parameter(_fan_in_init(shape, fan_in, math.sqrt(2.0), gen))
        self.bias = nn.Parameter(torch.zeros(cfg.wide_filters))
        self.in_scale = nn.Parameter(torch.ones(cfg.wide_filters))
        self.in_shift = nn.Parameter(torch.zeros(cfg.wide_filters))
        self.stride = cfg.wide_stride
        self.eps = cfg.in_eps

    def forward(self, x):
        y = L.conv_forward(x, self.weight, self.bias, self.stride)
        y = L.instance_norm(y, self.in_scale, self.in_shift, self.eps)
        return L.max_pool(L.relu(y), 2, 2)


class SEBlock(nn.Module):
    def __init__(self, channels: int, reduction: int, gen: torch.Generator):
        super().__init__()
        mid = channels // reduction
        self.reduction = reduction
        self.w1 = nn.Parameter(_fan_in_init((mid, channels), channels, math.sqrt(2.0), gen))
        self.w2 = nn.Parameter(_fan_in_init((channels, mid), mid, 1.0, gen))

    def forward(self, u):
        return L.se_block(u, self.w1, self.w2, self.reduction)


class ConvStage(nn.Module):
    """conv -> ReLU -> maxpool 2/2 -> SE."""

    def __init__(self, cfg: MacnnConfig, c_in: int, c_out: int, k: int, gen: torch.Generator):
        super().__init__()
        shape = (c_out, c_in) + _kernel_shape(cfg, k)
        self.weight = nn.Parameter(_fan_in_init(shape, c_in * k ** cfg.nd, math.sqrt(2.0), gen))
        self.bias = nn.Parameter(torch.zeros(c_out))
        self.se = SEBlock(c_out, cfg.se_reduction, gen)

    def forward(self, x):
        y = L.max_pool(L.relu(L.conv_forward(x, self.weight, self.bias, 1)), 2, 2)
        return self.se(y)


class Branch(nn.Sequential):
    def __init__(self, cfg: MacnnConfig, k: int, gen: torch.Generator):
        stages = []
        c_in = cfg.wide_filters
        for c_out in cfg.stage_filters:
            stages.append(ConvStage(cfg, c_in, c_out, k, gen))
            c_in = c_out
        super().__init__(*stages)


class ECA(nn.Module):
    def __init__(self, channels: int, k: int, gen: torch.Generator):
        super().__init__()
        self.weight = nn.Parameter(_fan_in_init((k,), k, 1.0, gen))
        self.bias = nn.Parameter(torch.zeros(()))

    def forward(self, x):
        w = L.eca_apply(L.squeeze(x), self.weight, self.bias)
        return x * w.view(w.shape + (1,) * (x.dim() - 2))


class MACNN(nn.Module):
    def __init__(self, cfg: MacnnConfig, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(int(seed))
        self.cfg = cfg
        self.wide = WideBlock(cfg, gen)
        self.branches = nn.ModuleList(Branch(cfg, k, gen) for k in cfg.branch_kernels)
        self.eca = ECA(cfg.fused_channels, cfg.eca_kernel, gen)
        c = cfg.fused_channels
        self.fc_weight = nn.Parameter(_fan_in_init((cfg.num_classes, c), c, 1.0, gen))
        self.fc_bias = nn.Parameter(torch.zeros(cfg.num_classes))

    def _check_input(self, x):
        cfg = self.cfg
        want = (cfg.in_channels,) + (cfg.input_size,) * cfg.nd
        if tuple(x.shape[1:]) != want:
            raise ShapeMismatch(f"expected (N, {', '.join(map(str, want))}), got {tuple(x.shape)}")

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Fused, attention-weighted, globally pooled features (N, fused_channels)."""
        self._check_input(x)
        h = self.wide(x)
        fused = torch.cat([b(h) for b in self.branches], dim=1)
        return L.squeeze(self.eca(fused))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        logits = L.dense(self.features(x), self.fc_weight) + self.fc_bias
        if not torch.isfinite(logits).all():
            raise NonFiniteActivation("non-finite logits")
        return logits


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def macnn_forward(images, model: MACNN) -> torch.Tensor:
    """Logits for a batch given as GafImages, an array, or a tensor."""
    return model(as_input_tensor(images, model.cfg, dtype=next(model.parameters()).dtype))


def as_input_tensor(images, cfg: MacnnConfig, dtype=torch.float32) -> torch.Tensor:
    import numpy as np

    if isinstance(images, torch.Tensor):
        x = images.to(dtype)
    else:
        if len(images) and hasattr(images[0], "pixels"):
            arr = np.stack([np.asarray(im.pixels) for im in images])
        else:
            arr = np.asarray(images)
        x = torch.as_tensor(np.ascontiguousarray(arr), dtype=dtype)
    if x.dim() == cfg.nd + 1:
        x = x.unsqueeze(1)
    return x
