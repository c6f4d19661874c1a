"""Two-branch cascade: ResNet block on the RP branch, U-Net on both branches, DC layer.

Complex images travel through the network as real tensors of shape
``(batch, 2, H, W)`` (real, imaginary).  Coil data stays complex:
``k_dp`` and ``maps`` are ``(batch, coils, H, W)`` complex tensors and the
mask is ``(batch, W)``.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass
import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F


@dataclass(frozen=True)
class NetworkConfig:
    n_units: int = 2
    resnet_filters: int = 16
    resnet_layers: int = 3
    leaky_slope: float = 0.2
    unet_levels: int = 3
    unet_base_filters: int = 16
    unet_max_filters: int = 512
    kernel_size: int = 3
    # optional variants: x_tilde = x_dp + U(...), and a down-scaled init of output convs
    residual: bool = False
    head_init_scale: float = 1.0

    def __post_init__(self):
        for name in ("resnet_filters", "resnet_layers", "unet_levels",
                     "unet_base_filters", "unet_max_filters", "kernel_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_units < 0:
            raise ValueError("n_units must be >= 0")
        if self.resnet_layers < 2:
            raise ValueError("resnet_layers must be >= 2 (input and output projections)")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky_slope must lie in (0, 1)")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")

    @classmethod
    def full_size(cls, residual: bool = False) -> "NetworkConfig":
        return cls(n_units=10, resnet_filters=64, resnet_layers=3, unet_levels=6,
                   unet_base_filters=64, unet_max_filters=512, residual=residual)

    def unet_widths(self) -> list[int]:
        return [min(self.unet_base_filters * 2**lvl, self.unet_max_filters)
                for lvl in range(self.unet_levels)]

    def check_shape(self, height: int, width: int) -> None:
        div = 2 ** (self.unet_levels - 1)
        if height % div or width % div:
            raise ValueError(f"image {height}x{width} not divisible by {div} "
                             f"({self.unet_levels} U-Net levels)")

    def to_dict(self) -> dict:
        return asdict(self)


# -- complex helpers ---------------------------------------------------------

def to_channels(x: torch.Tensor) -> torch.Tensor:
    """(B, H, W) complex -> (B, 2, H, W) real."""
    return torch.stack([x.real, x.imag], dim=1)


def to_complex(x: torch.Tensor) -> torch.Tensor:
    """(B, 2, H, W) real -> (B, H, W) complex."""
    return torch.complex(x[:, 0], x[:, 1])


def fft2c(x: torch.Tensor) -> torch.Tensor:
    dims = (-2, -1)
    return torch.fft.fftshift(torch.fft.fft2(torch.fft.ifftshift(x, dim=dims), norm="ortho"), dim=dims)


def ifft2c(k: torch.Tensor) -> torch.Tensor:
    dims = (-2, -1)
    return torch.fft.fftshift(torch.fft.ifft2(torch.fft.ifftshift(k, dim=dims), norm="ortho"), dim=dims)


def dc_linear(u: torch.Tensor, mask: torch.Tensor, maps: torch.Tensor) -> torch.Tensor:
    """``sum_i conj(s_i) F^-1{(1 - m) F{u s_i}}`` for complex ``u`` of shape (B, H, W)."""
    keep = (1.0 - mask)[:, None, None, :]
    k = fft2c(maps * u[:, None]) * keep
    return torch.sum(maps.conj() * ifft2c(k), dim=1)


class _DataConsistency(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, mask, k_dp, maps):
        ctx.save_for_backward(mask, maps)
        u = to_complex(x)
        affine = torch.sum(maps.conj() * ifft2c(k_dp), dim=1)
        return to_channels(affine + dc_linear(u, mask, maps))

    @staticmethod
    def backward(ctx, grad):
        mask, maps = ctx.saved_tensors
        # the linear part is C-linear and self-adjoint
        g = to_channels(dc_linear(to_complex(grad), mask, maps))
        return g, None, None, None


def data_consistency(x: torch.Tensor, mask: torch.Tensor, k_dp: torch.Tensor,
                     maps: torch.Tensor) -> torch.Tensor:
    """Differentiable DC layer on a (B, 2, H, W) estimate."""
    return _DataConsistency.apply(x, mask, k_dp, maps)


def zero_filled(k: torch.Tensor, maps: torch.Tensor) -> torch.Tensor:
    """Coil combination of (B, C, H, W) k-space into a (B, 2, H, W) image."""
    return to_channels(torch.sum(maps.conj() * ifft2c(k), dim=1))


# -- blocks ------------------------------------------------------------------

class ResNetBlock(nn.Module):
    """conv(2->F), LReLU, [conv(F->F), LReLU]*, conv(F->2), plus identity skip."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        f, k = cfg.resnet_filters, cfg.kernel_size
        chans = [2] + [f] * (cfg.resnet_layers - 1) + [2]
        self.convs = nn.ModuleList(
            nn.Conv2d(cin, cout, k, padding=k // 2) for cin, cout in zip(chans, chans[1:]))
        self.slope = cfg.leaky_slope

    def forward(self, x):
        if x.shape[1] != 2:
            raise ValueError(f"ResNet block expects 2 channels, got {x.shape[1]}")
        h = x
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = F.leaky_relu(h, self.slope)
        return x + h


class UNet(nn.Module):
    """One conv per scale; stride-2 downsampling, nearest x2 upsampling, skip concatenation."""

    def __init__(self, cfg: NetworkConfig, in_channels: int = 4):
        super().__init__()
        k = cfg.kernel_size
        widths = cfg.unet_widths()
        self.levels = cfg.unet_levels
        self.slope = cfg.leaky_slope
        self.down = nn.ModuleList()
        cin = in_channels
        for lvl, w in enumerate(widths):
            self.down.append(nn.Conv2d(cin, w, k, stride=1 if lvl == 0 else 2, padding=k // 2))
            cin = w
        self.up = nn.ModuleList()
        for lvl in range(self.levels - 2, -1, -1):
            self.up.append(nn.Conv2d(cin + widths[lvl], widths[lvl], k, padding=k // 2))
            cin = widths[lvl]
        self.head = nn.Conv2d(cin, 2, 1)

    def forward(self, x):
        if x.shape[1] != 4:
            raise ValueError(f"U-Net expects 4 channels, got {x.shape[1]}")
        div = 2 ** (self.levels - 1)
        if x.shape[-2] % div or x.shape[-1] % div:
            raise ValueError(f"spatial size {tuple(x.shape[-2:])} not divisible by {div}")
        skips = []
        h = x
        for conv in self.down:
            h = F.leaky_relu(conv(h), self.slope)
            skips.append(h)
        skips.pop()
        for conv in self.up:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = F.leaky_relu(conv(torch.cat([h, skips.pop()], dim=1)), self.slope)
        return self.head(h)


class Unit(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.resnet = ResNetBlock(cfg)
        self.unet = UNet(cfg)
        self.residual = cfg.residual

    def forward(self, x_dp, x_rp, mask, k_dp, maps):
        x_rp = self.resnet(x_rp)
        x_tilde = self.unet(torch.cat([x_dp, x_rp], dim=1))
        if self.residual:
            x_tilde = x_dp + x_tilde
        return data_consistency(x_tilde, mask, k_dp, maps), x_rp, x_tilde


class CascadeNet(nn.Module):
    """Cascade of ``n_units`` units.  The same weights serve the single-branch ablation."""

    def __init__(self, cfg: NetworkConfig = NetworkConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.units = nn.ModuleList(Unit(cfg) for _ in range(cfg.n_units))
        last = cfg.resnet_layers - 1
        self._head_names = {n for i in range(cfg.n_units)
                            for n in (f"units.{i}.unet.head.weight",
                                      f"units.{i}.resnet.convs.{last}.weight")}
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        """He-normal (fan-in, leaky gain) kernels and zero biases from a seeded generator."""
        rng = np.random.default_rng(seed)
        gain2 = 2.0 / (1.0 + self.cfg.leaky_slope**2)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
                else:
                    fan_in = int(np.prod(p.shape[1:]))
                    w = rng.normal(0.0, math.sqrt(gain2 / fan_in), size=tuple(p.shape))
                    if name in self._head_names:
                        w *= self.cfg.head_init_scale
                    p.copy_(torch.from_numpy(w.astype(np.float32)))

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, x0_dp, x0_rp, mask, k_dp, maps, return_intermediates: bool = False):
        self.cfg.check_shape(*x0_dp.shape[-2:])
        x_dp, x_rp = x0_dp, x0_rp
        tildes = []
        for unit in self.units:
            x_dp, x_rp, x_tilde = unit(x_dp, x_rp, mask, k_dp, maps)
            tildes.append(x_tilde)
        if return_intermediates:
            return x_dp, tildes
        return x_dp

    def forward_single_branch(self, x0_dp, mask, k_dp, maps):
        return self.forward(x0_dp, x0_dp, mask, k_dp, maps)


def parameter_gradients(model: nn.Module, loss: torch.Tensor) -> "OrderedDict[str, torch.Tensor]":
    """Reverse-mode gradients of a scalar loss for every named parameter."""
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return OrderedDict(
        (n, torch.zeros_like(p) if g is None else g) for n, p, g in zip(names, params, grads))
